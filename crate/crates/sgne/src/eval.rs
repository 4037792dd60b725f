//! Downstream evaluation: node classification over a sweep of training
//! ratios, link prediction with Hadamard edge features and a rank-based
//! AUC, and the PPMI-versus-similarity curve.
//!
//! Node representations are the center vectors; context vectors stay
//! available through the export path only.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::model::EmbeddingModel;
use crate::optim::{train, CorpusConfig, ModelConfig, OptimizerConfig, TrainConfig};

/// Node-id to class-id assignments.
#[derive(Debug, Clone)]
pub struct LabeledNodes {
    pub labels: BTreeMap<usize, usize>,
    pub class_count: usize,
}

impl LabeledNodes {
    pub fn new(labels: BTreeMap<usize, usize>) -> Result<LabeledNodes> {
        let classes: BTreeSet<usize> = labels.values().copied().collect();
        if classes.len() < 2 {
            return Err(Error::DegenerateLabels(format!(
                "classification needs >= 2 classes, got {}",
                classes.len()
            )));
        }
        Ok(LabeledNodes { labels, class_count: classes.len() })
    }
}

/// Train/test edge split with sampled non-edge negatives.
#[derive(Debug, Clone)]
pub struct LinkSplit {
    pub train_pos: Vec<(usize, usize)>,
    pub train_neg: Vec<(usize, usize)>,
    pub test_pos: Vec<(usize, usize)>,
    pub test_neg: Vec<(usize, usize)>,
    pub seed: u64,
}

/// Uniform random edge split: `floor((1 - train_fraction) |E|)` test
/// positives, the rest training positives; negatives drawn uniformly from
/// non-edges without replacement, one per training positive and two per
/// test positive.
pub fn split_links(graph: &Graph, train_fraction: f64, seed: u64) -> Result<LinkSplit> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!(
            "train_fraction must be in (0,1), got {train_fraction}"
        )));
    }
    let n = graph.node_count();
    let mut edges: Vec<(usize, usize)> = graph.edges().iter().map(|e| (e.src, e.dst)).collect();
    let edge_set: BTreeSet<(usize, usize)> = edges.iter().copied().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    edges.shuffle(&mut rng);

    // Tiny epsilon so fractions like 1 - 0.8 floor to their exact value.
    let test_count = ((1.0 - train_fraction) * edges.len() as f64 + 1e-9).floor() as usize;
    let train_count = edges.len() - test_count;
    let test_pos: Vec<(usize, usize)> = edges[..test_count].to_vec();
    let train_pos: Vec<(usize, usize)> = edges[test_count..].to_vec();

    let needed = train_count + 2 * test_count;
    let non_edge_total = n * (n - 1) / 2 - edge_set.len();
    if non_edge_total < needed {
        return Err(Error::Split(format!(
            "need {needed} non-edge negatives but only {non_edge_total} exist"
        )));
    }

    let mut negatives: Vec<(usize, usize)> = Vec::with_capacity(needed);
    let mut taken: BTreeSet<(usize, usize)> = BTreeSet::new();
    if needed * 2 >= non_edge_total {
        // Dense regime: enumerate every non-edge and shuffle.
        let mut pool: Vec<(usize, usize)> = Vec::with_capacity(non_edge_total);
        for a in 0..n {
            for b in (a + 1)..n {
                if !edge_set.contains(&(a, b)) {
                    pool.push((a, b));
                }
            }
        }
        pool.shuffle(&mut rng);
        negatives.extend(pool.into_iter().take(needed));
    } else {
        while negatives.len() < needed {
            let a = rng.gen_range(0..n);
            let b = rng.gen_range(0..n);
            if a == b {
                continue;
            }
            let pair = (a.min(b), a.max(b));
            if edge_set.contains(&pair) || !taken.insert(pair) {
                continue;
            }
            negatives.push(pair);
        }
    }
    let train_neg = negatives[..train_count].to_vec();
    let test_neg = negatives[train_count..].to_vec();
    Ok(LinkSplit { train_pos, train_neg, test_pos, test_neg, seed })
}

/// Elementwise product of the two endpoints' center vectors, one row per
/// pair.
pub fn hadamard_features(model: &EmbeddingModel, pairs: &[(usize, usize)]) -> Vec<Vec<f64>> {
    pairs
        .iter()
        .map(|&(a, b)| {
            model
                .center_row(a)
                .iter()
                .zip(model.center_row(b))
                .map(|(x, y)| x * y)
                .collect()
        })
        .collect()
}

/// One-vs-rest linear model trained with full-batch subgradient descent
/// on the hinge loss plus an L2 penalty. Deterministic: weights start at
/// zero and the step schedule is fixed. Features are standardized with
/// the training-set statistics; batch-normalized embeddings put wildly
/// different scales on different coordinates, and the fixed-step descent
/// cannot cope with the raw conditioning.
#[derive(Debug, Clone)]
pub struct LinearClassifier {
    /// One weight row per class, last entry is the bias.
    pub weights: Vec<Vec<f64>>,
    pub classes: Vec<usize>,
    /// Per-feature training mean and standard deviation.
    pub feat_mean: Vec<f64>,
    pub feat_std: Vec<f64>,
}

pub fn train_linear_classifier(
    features: &[Vec<f64>],
    labels: &[usize],
    l2_weight: f64,
    epochs: usize,
) -> Result<LinearClassifier> {
    if features.len() != labels.len() || features.is_empty() {
        return Err(Error::Domain("features and labels must be non-empty and aligned".into()));
    }
    let classes: Vec<usize> = labels.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    if classes.len() < 2 {
        return Err(Error::DegenerateLabels(format!(
            "training set has {} class(es)",
            classes.len()
        )));
    }
    let dim = features[0].len();
    let m = features.len() as f64;
    let mut feat_mean = vec![0.0; dim];
    for x in features {
        for (s, v) in feat_mean.iter_mut().zip(x) {
            *s += v / m;
        }
    }
    let mut feat_std = vec![0.0; dim];
    for x in features {
        for (s, (v, mu)) in feat_std.iter_mut().zip(x.iter().zip(&feat_mean)) {
            *s += (v - mu) * (v - mu) / m;
        }
    }
    for s in &mut feat_std {
        // A constant feature carries nothing; keep it finite and inert.
        *s = if *s > 1e-24 { s.sqrt() } else { 1.0 };
    }
    let features: Vec<Vec<f64>> = features
        .iter()
        .map(|x| {
            x.iter()
                .zip(feat_mean.iter().zip(&feat_std))
                .map(|(v, (mu, sd))| (v - mu) / sd)
                .collect()
        })
        .collect();
    let mut weights = vec![vec![0.0; dim + 1]; classes.len()];
    for t in 1..=epochs {
        let step = 0.1 / (t as f64).sqrt();
        for (c, &class) in classes.iter().enumerate() {
            let w = &mut weights[c];
            let mut grad = vec![0.0; dim + 1];
            for (x, &label) in features.iter().zip(labels) {
                let y = if label == class { 1.0 } else { -1.0 };
                let score: f64 =
                    x.iter().zip(w.iter()).map(|(a, b)| a * b).sum::<f64>() + w[dim];
                if y * score < 1.0 {
                    for (g, xi) in grad.iter_mut().zip(x) {
                        *g -= y * xi;
                    }
                    grad[dim] -= y;
                }
            }
            for d in 0..=dim {
                let reg = if d < dim { l2_weight * w[d] } else { 0.0 };
                w[d] -= step * (grad[d] / m + reg);
            }
        }
    }
    Ok(LinearClassifier { weights, classes, feat_mean, feat_std })
}

impl LinearClassifier {
    pub fn decision_scores(&self, x: &[f64]) -> Vec<f64> {
        let z: Vec<f64> = x
            .iter()
            .zip(self.feat_mean.iter().zip(&self.feat_std))
            .map(|(v, (mu, sd))| (v - mu) / sd)
            .collect();
        self.weights
            .iter()
            .map(|w| z.iter().zip(w.iter()).map(|(a, b)| a * b).sum::<f64>() + w[z.len()])
            .collect()
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        let scores = self.decision_scores(x);
        let best = scores
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite scores"))
            .map(|(i, _)| i)
            .expect("at least two classes");
        self.classes[best]
    }

    /// Decision score of the given class (binary tasks score class 1).
    pub fn class_score(&self, x: &[f64], class: usize) -> f64 {
        let idx = self.classes.iter().position(|&c| c == class).expect("known class");
        self.decision_scores(x)[idx]
    }
}

/// Rank-based AUC (Mann-Whitney), ties counted half.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Domain("AUC needs both classes present".into()));
    }
    let mut wins = 0.0;
    for (sp, _) in scores.iter().zip(labels).filter(|(_, &l)| l) {
        for (sn, _) in scores.iter().zip(labels).filter(|(_, &l)| !l) {
            wins += if sp > sn {
                1.0
            } else if sp == sn {
                0.5
            } else {
                0.0
            };
        }
    }
    Ok(wins / (pos * neg) as f64)
}

#[derive(Debug, Clone, Serialize)]
pub struct RatioResult {
    pub ratio: f64,
    pub mean_accuracy: Option<f64>,
    pub std_accuracy: Option<f64>,
    pub runs: usize,
    /// Reason this ratio produced no result (too few nodes per class).
    pub skipped: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ClassificationReport {
    pub ratios: Vec<RatioResult>,
    /// Mean of the per-ratio means, skipped ratios excluded.
    pub mean_over_ratios: Option<f64>,
    pub runs: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct LinkPredictionReport {
    pub aucs: Vec<f64>,
    pub mean_auc: f64,
    pub std_auc: f64,
    pub train_fraction: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "task", rename_all = "kebab-case")]
pub enum EvalReport {
    Classification(ClassificationReport),
    LinkPrediction(LinkPredictionReport),
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write_csv<W: std::io::Write>(&self, out: &mut W) -> Result<()> {
        match self {
            EvalReport::Classification(r) => {
                writeln!(out, "ratio,mean_accuracy,std_accuracy,runs,skipped")?;
                for row in &r.ratios {
                    writeln!(
                        out,
                        "{},{},{},{},{}",
                        row.ratio,
                        row.mean_accuracy.map_or(String::new(), |v| v.to_string()),
                        row.std_accuracy.map_or(String::new(), |v| v.to_string()),
                        row.runs,
                        row.skipped.as_deref().unwrap_or("")
                    )?;
                }
                if let Some(mean) = r.mean_over_ratios {
                    writeln!(out, "mean,{mean},,,")?;
                }
            }
            EvalReport::LinkPrediction(r) => {
                writeln!(out, "run,auc")?;
                for (i, a) in r.aucs.iter().enumerate() {
                    writeln!(out, "{i},{a}")?;
                }
                writeln!(out, "mean,{}", r.mean_auc)?;
                writeln!(out, "std,{}", r.std_auc)?;
            }
        }
        Ok(())
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

/// The 18 standard training ratios: 1% through 9%, then 10% through 90%.
pub fn default_ratios() -> Vec<f64> {
    (1..=9)
        .map(|p| p as f64 / 100.0)
        .chain((1..=9).map(|p| p as f64 / 10.0))
        .collect()
}

/// For each ratio and run: stratified split of the labeled nodes, linear
/// classifier on the center embeddings, accuracy on the held-out rest.
/// Ratios that cannot place at least one training node per class are
/// recorded as skipped.
pub fn node_classification_sweep(
    model: &EmbeddingModel,
    labeled: &LabeledNodes,
    ratios: &[f64],
    runs: usize,
    seed: u64,
) -> Result<EvalReport> {
    if runs == 0 {
        return Err(Error::Config("runs must be >= 1".into()));
    }
    for &node in labeled.labels.keys() {
        if node >= model.node_count {
            return Err(Error::Domain(format!("labeled node {node} outside the model")));
        }
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (&node, &class) in &labeled.labels {
        by_class.entry(class).or_default().push(node);
    }

    let mut results = Vec::with_capacity(ratios.len());
    for (ri, &ratio) in ratios.iter().enumerate() {
        if !(ratio > 0.0 && ratio < 1.0) {
            return Err(Error::Config(format!("ratio must be in (0,1), got {ratio}")));
        }
        // Stratified budget: floor per class. A class with zero training
        // nodes makes the ratio infeasible.
        let infeasible = by_class
            .values()
            .any(|nodes| (ratio * nodes.len() as f64 + 1e-9).floor() as usize == 0);
        if infeasible {
            results.push(RatioResult {
                ratio,
                mean_accuracy: None,
                std_accuracy: None,
                runs: 0,
                skipped: Some("ratio leaves a class without training nodes".into()),
            });
            continue;
        }
        let mut accuracies = Vec::with_capacity(runs);
        for run in 0..runs {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream((ri as u64) << 32 | run as u64);
            let mut train_nodes = Vec::new();
            let mut test_nodes = Vec::new();
            for nodes in by_class.values() {
                let mut shuffled = nodes.clone();
                shuffled.shuffle(&mut rng);
                let take = (ratio * shuffled.len() as f64 + 1e-9).floor() as usize;
                train_nodes.extend_from_slice(&shuffled[..take]);
                test_nodes.extend_from_slice(&shuffled[take..]);
            }
            if test_nodes.is_empty() {
                return Err(Error::Domain(format!("ratio {ratio} leaves no test nodes")));
            }
            let features: Vec<Vec<f64>> =
                train_nodes.iter().map(|&v| model.center_row(v).to_vec()).collect();
            let labels: Vec<usize> = train_nodes.iter().map(|&v| labeled.labels[&v]).collect();
            let classifier = train_linear_classifier(&features, &labels, 1.0, 200)?;
            let correct = test_nodes
                .iter()
                .filter(|&&v| classifier.predict(model.center_row(v)) == labeled.labels[&v])
                .count();
            accuracies.push(correct as f64 / test_nodes.len() as f64);
        }
        let (mean, std) = mean_std(&accuracies);
        results.push(RatioResult {
            ratio,
            mean_accuracy: Some(mean),
            std_accuracy: Some(std),
            runs,
            skipped: None,
        });
    }
    let means: Vec<f64> = results.iter().filter_map(|r| r.mean_accuracy).collect();
    let mean_over_ratios = if means.is_empty() {
        None
    } else {
        Some(means.iter().sum::<f64>() / means.len() as f64)
    };
    Ok(EvalReport::Classification(ClassificationReport {
        ratios: results,
        mean_over_ratios,
        runs,
        seed,
    }))
}

/// Per run: edge split, embeddings trained on the training graph only,
/// Hadamard features, linear classifier on the training pairs, AUC on the
/// held-out pairs.
#[allow(clippy::too_many_arguments)]
pub fn link_prediction_eval(
    graph: &Graph,
    corpus: &CorpusConfig,
    model_cfg: &ModelConfig,
    opt_cfg: &OptimizerConfig,
    schedule: &TrainConfig,
    train_fraction: f64,
    runs: usize,
    seed: u64,
) -> Result<EvalReport> {
    if runs == 0 {
        return Err(Error::Config("runs must be >= 1".into()));
    }
    let mut aucs = Vec::with_capacity(runs);
    for run in 0..runs {
        let run_seed = seed.wrapping_add((run as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let split = split_links(graph, train_fraction, run_seed)?;
        let train_graph = graph.edge_subset_keeping_nodes(&split.train_pos)?;
        let mut run_schedule = schedule.clone();
        run_schedule.seed = run_seed;
        let (model, _) = train(&train_graph, corpus, model_cfg, opt_cfg, &run_schedule)?;

        let mut pairs = split.train_pos.clone();
        pairs.extend_from_slice(&split.train_neg);
        let features = hadamard_features(&model, &pairs);
        let labels: Vec<usize> = std::iter::repeat_n(1usize, split.train_pos.len())
            .chain(std::iter::repeat_n(0usize, split.train_neg.len()))
            .collect();
        let classifier = train_linear_classifier(&features, &labels, 1.0, 200)?;

        let mut test_pairs = split.test_pos.clone();
        test_pairs.extend_from_slice(&split.test_neg);
        let test_features = hadamard_features(&model, &test_pairs);
        let scores: Vec<f64> =
            test_features.iter().map(|x| classifier.class_score(x, 1)).collect();
        let test_labels: Vec<bool> = std::iter::repeat_n(true, split.test_pos.len())
            .chain(std::iter::repeat_n(false, split.test_neg.len()))
            .collect();
        aucs.push(auc(&scores, &test_labels)?);
    }
    let (mean_auc, std_auc) = mean_std(&aucs);
    Ok(EvalReport::LinkPrediction(LinkPredictionReport {
        aucs,
        mean_auc,
        std_auc,
        train_fraction,
        seed,
    }))
}

/// Row of the PPMI-versus-similarity curve.
#[derive(Debug, Clone, Serialize)]
pub struct CurveRow {
    pub rank: usize,
    pub ppmi: f64,
    pub similarity: f64,
}

/// Selects the top `top_fraction` of pairs by PPMI score and reports the
/// cosine of the endpoints' rows for each, sorted by PPMI ascending.
pub fn ppmi_similarity_curve(
    model: &EmbeddingModel,
    scores: &BTreeMap<(usize, usize), f64>,
    top_fraction: f64,
) -> Result<Vec<CurveRow>> {
    if !(top_fraction > 0.0 && top_fraction <= 1.0) {
        return Err(Error::Config(format!(
            "top_fraction must be in (0,1], got {top_fraction}"
        )));
    }
    let mut entries: Vec<(&(usize, usize), &f64)> = scores.iter().collect();
    entries.sort_by(|a, b| a.1.partial_cmp(b.1).expect("finite PPMI").then(a.0.cmp(b.0)));
    let keep = ((top_fraction * entries.len() as f64).round() as usize).min(entries.len());
    let selected = &entries[entries.len() - keep..];
    let mut rows = Vec::with_capacity(selected.len());
    for (rank, (&(i, j), &ppmi)) in selected.iter().enumerate() {
        rows.push(CurveRow { rank, ppmi, similarity: model.normalized_similarity(i, j)? });
    }
    Ok(rows)
}

pub fn write_curve_csv<W: std::io::Write>(rows: &[CurveRow], out: &mut W) -> Result<()> {
    writeln!(out, "rank,ppmi,similarity")?;
    for r in rows {
        writeln!(out, "{},{},{}", r.rank, r.ppmi, r.similarity)?;
    }
    Ok(())
}
