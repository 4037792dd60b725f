//! Random-walk corpus generation, co-occurrence weights, PPMI scoring and
//! the degree-proportional noise distribution for negative sampling.

use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::Graph;

/// Output of the walk scheduler: one walk per scheduled start node.
#[derive(Debug, Clone)]
pub struct WalkSet {
    pub walks: Vec<Vec<usize>>,
    pub walk_length: usize,
    pub walks_per_node: usize,
    pub seed: u64,
}

/// Symmetric pair weights w_ij accumulated from walk windows.
///
/// Every in-window observation adds 1 to both orientations, so the table is
/// symmetric by construction. `node_counts` tracks how often a node appears
/// as the center of a recorded pair and `total_pairs` the number of recorded
/// (directed) pairs; with unit increments these coincide numerically with
/// `row_sums` and `total`.
#[derive(Debug, Clone)]
pub struct CooccurrenceTable {
    pub pair_weights: BTreeMap<(usize, usize), f64>,
    pub row_sums: Vec<f64>,
    pub node_counts: Vec<f64>,
    pub total: f64,
    pub total_pairs: f64,
}

/// Uniform (weight-proportional) random walks, DeepWalk style. Start nodes
/// are shuffled once per pass; `walks_per_node` passes are scheduled.
/// Deterministic for a fixed seed.
pub fn random_walks(
    graph: &Graph,
    walk_length: usize,
    walks_per_node: usize,
    seed: u64,
) -> Result<WalkSet> {
    if walk_length < 2 {
        return Err(Error::Domain(format!("walk_length must be >= 2, got {walk_length}")));
    }
    if graph.node_count() == 0 {
        return Err(Error::EmptyInput);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut walks = Vec::with_capacity(graph.node_count() * walks_per_node);
    let mut order: Vec<usize> = (0..graph.node_count()).collect();
    for _ in 0..walks_per_node {
        order.shuffle(&mut rng);
        for &start in &order {
            let mut walk = Vec::with_capacity(walk_length);
            walk.push(start);
            let mut current = start;
            for _ in 1..walk_length {
                match graph.sample_neighbor(current, &mut rng) {
                    Some(next) => {
                        walk.push(next);
                        current = next;
                    }
                    None => break,
                }
            }
            walks.push(walk);
        }
    }
    Ok(WalkSet { walks, walk_length, walks_per_node, seed })
}

/// Counts co-occurrences: for every walk position and offset `1..=window`
/// within bounds, adds 1 to both orientations of the pair.
pub fn cooccurrence(walks: &WalkSet, window: usize, node_count: usize) -> Result<CooccurrenceTable> {
    if window < 1 {
        return Err(Error::Domain(format!("window must be >= 1, got {window}")));
    }
    let mut table = CooccurrenceTable {
        pair_weights: BTreeMap::new(),
        row_sums: vec![0.0; node_count],
        node_counts: vec![0.0; node_count],
        total: 0.0,
        total_pairs: 0.0,
    };
    for walk in &walks.walks {
        for t in 0..walk.len() {
            for o in 1..=window {
                let Some(&b) = walk.get(t + o) else { break };
                let a = walk[t];
                *table.pair_weights.entry((a, b)).or_insert(0.0) += 1.0;
                *table.pair_weights.entry((b, a)).or_insert(0.0) += 1.0;
                table.row_sums[a] += 1.0;
                table.row_sums[b] += 1.0;
                table.node_counts[a] += 1.0;
                table.node_counts[b] += 1.0;
                table.total += 2.0;
                table.total_pairs += 2.0;
            }
        }
    }
    Ok(table)
}

/// Positive pointwise mutual information with natural log and no smoothing:
/// `max(0, ln(w_ij * total_pairs / (#(i) * #(j))))`; zero entries omitted.
pub fn ppmi(table: &CooccurrenceTable) -> Result<BTreeMap<(usize, usize), f64>> {
    if table.pair_weights.is_empty() {
        return Err(Error::Domain("cannot compute PPMI of an empty table".into()));
    }
    let mut scores = BTreeMap::new();
    for (&(i, j), &w) in &table.pair_weights {
        let ratio = w * table.total_pairs / (table.node_counts[i] * table.node_counts[j]);
        let value = ratio.ln();
        if value > 0.0 {
            scores.insert((i, j), value);
        }
    }
    Ok(scores)
}

/// Noise distribution `P(v) proportional to d_v^alpha` with a Vose alias
/// table for O(1) sampling. Nodes with zero weight are excluded from the
/// support; their stored probability is 0.
#[derive(Debug, Clone)]
pub struct NoiseDistribution {
    pub probabilities: Vec<f64>,
    pub alpha: f64,
    support: Vec<usize>,
    prob: Vec<f64>,
    alias: Vec<usize>,
}

impl NoiseDistribution {
    pub fn from_graph(graph: &Graph, alpha: f64) -> Result<Self> {
        Self::from_weights(graph.degrees(), alpha)
    }

    pub fn from_table(table: &CooccurrenceTable, alpha: f64) -> Result<Self> {
        Self::from_weights(&table.row_sums, alpha)
    }

    pub fn from_weights(weights: &[f64], alpha: f64) -> Result<Self> {
        let mut support = Vec::new();
        let mut powered = Vec::new();
        for (i, &w) in weights.iter().enumerate() {
            if w > 0.0 {
                let p = w.powf(alpha);
                if !p.is_finite() {
                    return Err(Error::Domain(format!(
                        "weight {w}^{alpha} is not finite; choose a smaller alpha"
                    )));
                }
                support.push(i);
                powered.push(p);
            }
        }
        let total: f64 = powered.iter().sum();
        if support.is_empty() || !(total > 0.0) || !total.is_finite() {
            return Err(Error::Domain("noise distribution has no positive-weight support".into()));
        }

        let mut probabilities = vec![0.0; weights.len()];
        for (&node, &p) in support.iter().zip(&powered) {
            probabilities[node] = p / total;
        }

        // Vose alias construction over the support.
        let m = support.len();
        let mut scaled: Vec<f64> = powered.iter().map(|p| p / total * m as f64).collect();
        let mut prob = vec![0.0; m];
        let mut alias = vec![0usize; m];
        let mut small: Vec<usize> = (0..m).filter(|&i| scaled[i] < 1.0).collect();
        let mut large: Vec<usize> = (0..m).filter(|&i| scaled[i] >= 1.0).collect();
        // Pop inside the loop body: evaluating both pops in a tuple pattern
        // would drop a bucket whenever exactly one worklist is empty.
        while !small.is_empty() && !large.is_empty() {
            let s = small.pop().expect("non-empty");
            let l = large.pop().expect("non-empty");
            prob[s] = scaled[s];
            alias[s] = l;
            scaled[l] = (scaled[l] + scaled[s]) - 1.0;
            if scaled[l] < 1.0 {
                small.push(l);
            } else {
                large.push(l);
            }
        }
        for i in small.into_iter().chain(large) {
            prob[i] = 1.0;
        }

        Ok(NoiseDistribution { probabilities, alpha, support, prob, alias })
    }

    /// O(1) draw of a node id.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> usize {
        let i = rng.gen_range(0..self.support.len());
        if rng.gen::<f64>() < self.prob[i] {
            self.support[i]
        } else {
            self.support[self.alias[i]]
        }
    }
}

/// One walk per line, space-separated node labels.
pub fn write_walks<W: Write>(walks: &WalkSet, labels: &[String], out: &mut W) -> Result<()> {
    for walk in &walks.walks {
        let line: Vec<&str> = walk.iter().map(|&v| labels[v].as_str()).collect();
        writeln!(out, "{}", line.join(" "))?;
    }
    Ok(())
}

/// CSV export `src,dst,ppmi`.
pub fn write_ppmi_csv<W: Write>(
    scores: &BTreeMap<(usize, usize), f64>,
    labels: &[String],
    out: &mut W,
) -> Result<()> {
    writeln!(out, "src,dst,ppmi")?;
    for (&(i, j), &v) in scores {
        writeln!(out, "{},{},{v}", labels[i], labels[j])?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph;

    fn path_graph() -> Graph {
        Graph::from_edges(vec!["a".into(), "b".into()], &[(0, 1, 1.0)]).unwrap()
    }

    fn walkset(walks: Vec<Vec<usize>>) -> WalkSet {
        WalkSet { walks, walk_length: 10, walks_per_node: 1, seed: 0 }
    }

    #[test]
    fn single_edge_walk_alternates() {
        let g = path_graph();
        let ws = random_walks(&g, 4, 1, 0).unwrap();
        for walk in &ws.walks {
            assert_eq!(walk.len(), 4);
            for pair in walk.windows(2) {
                assert_ne!(pair[0], pair[1]);
            }
        }
    }

    #[test]
    fn one_walk_per_scheduled_start() {
        let g = graph::generate_power_law_graph(100, 2.5, 1, 11).unwrap();
        let ws = random_walks(&g, 5, 1, 3).unwrap();
        assert_eq!(ws.walks.len(), g.node_count());
        let ws3 = random_walks(&g, 5, 3, 3).unwrap();
        assert_eq!(ws3.walks.len(), 3 * g.node_count());
    }

    #[test]
    fn walks_deterministic_under_seed() {
        let g = graph::generate_power_law_graph(50, 2.5, 1, 5).unwrap();
        let a = random_walks(&g, 10, 2, 99).unwrap();
        let b = random_walks(&g, 10, 2, 99).unwrap();
        assert_eq!(a.walks, b.walks);
    }

    #[test]
    fn walk_length_bound_checked() {
        let g = path_graph();
        assert!(random_walks(&g, 1, 1, 0).is_err());
    }

    #[test]
    fn cooccurrence_window_one() {
        let t = cooccurrence(&walkset(vec![vec![0, 1, 2]]), 1, 3).unwrap();
        assert_eq!(t.pair_weights.len(), 4);
        assert_eq!(t.pair_weights[&(0, 1)], 1.0);
        assert_eq!(t.pair_weights[&(1, 0)], 1.0);
        assert_eq!(t.pair_weights[&(1, 2)], 1.0);
        assert_eq!(t.pair_weights[&(2, 1)], 1.0);
        assert_eq!(t.row_sums[1], 2.0);
        assert_eq!(t.total, 4.0);
    }

    #[test]
    fn cooccurrence_window_two_adds_far_pair() {
        // Direct enumeration: windows of [0,1,2] at width 2 yield the three
        // unordered pairs (0,1),(1,2),(0,2), each recorded in both
        // directions with weight 1, so the total mass is 6.
        let t = cooccurrence(&walkset(vec![vec![0, 1, 2]]), 2, 3).unwrap();
        assert_eq!(t.pair_weights[&(0, 2)], 1.0);
        assert_eq!(t.pair_weights[&(2, 0)], 1.0);
        assert_eq!(t.pair_weights.len(), 6);
        assert_eq!(t.total, 6.0);
    }

    #[test]
    fn cooccurrence_additivity() {
        let once = cooccurrence(&walkset(vec![vec![0, 1, 2, 1]]), 2, 3).unwrap();
        let twice = cooccurrence(&walkset(vec![vec![0, 1, 2, 1], vec![0, 1, 2, 1]]), 2, 3).unwrap();
        for (k, v) in &once.pair_weights {
            assert_eq!(twice.pair_weights[k], 2.0 * v);
        }
    }

    #[test]
    fn cooccurrence_symmetry() {
        let g = graph::generate_power_law_graph(60, 2.5, 1, 2).unwrap();
        let ws = random_walks(&g, 12, 1, 7).unwrap();
        let t = cooccurrence(&ws, 4, g.node_count()).unwrap();
        for (&(i, j), &w) in &t.pair_weights {
            assert_eq!(w, t.pair_weights[&(j, i)]);
        }
        let sum: f64 = t.row_sums.iter().sum();
        assert_eq!(sum, t.total);
    }

    #[test]
    fn ppmi_direct_substitution() {
        let mut table = CooccurrenceTable {
            pair_weights: BTreeMap::new(),
            row_sums: vec![4.0, 4.0],
            node_counts: vec![4.0, 4.0],
            total: 16.0,
            total_pairs: 16.0,
        };
        table.pair_weights.insert((0, 1), 2.0);
        table.pair_weights.insert((1, 0), 1.0); // ratio = 1, clipped
        table.pair_weights.insert((1, 1), 0.5); // ratio < 1, clipped
        let scores = ppmi(&table).unwrap();
        assert!((scores[&(0, 1)] - 2.0f64.ln()).abs() < 1e-12);
        assert!(!scores.contains_key(&(1, 0)));
        assert!(!scores.contains_key(&(1, 1)));
    }

    #[test]
    fn noise_distribution_direct_and_uniform() {
        let d = NoiseDistribution::from_weights(&[1.0, 3.0], 1.0).unwrap();
        assert!((d.probabilities[0] - 0.25).abs() < 1e-12);
        assert!((d.probabilities[1] - 0.75).abs() < 1e-12);
        let u = NoiseDistribution::from_weights(&[1.0, 3.0, 7.0], 0.0).unwrap();
        for p in &u.probabilities {
            assert!((p - 1.0 / 3.0).abs() < 1e-12);
        }
        let total: f64 = d.probabilities.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn noise_distribution_monte_carlo_frequencies() {
        let d = NoiseDistribution::from_weights(&[1.0, 3.0], 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        let mut counts = [0u64; 2];
        let draws = 1_000_000;
        for _ in 0..draws {
            counts[d.sample(&mut rng)] += 1;
        }
        let f0 = counts[0] as f64 / draws as f64;
        assert!((f0 - 0.25).abs() < 0.005, "empirical {f0}");
    }

    #[test]
    fn noise_distribution_overflow_rejected() {
        assert!(NoiseDistribution::from_weights(&[1e300, 2.0], 2.0).is_err());
    }

    #[test]
    fn alias_sampler_chi_square_goodness_of_fit() {
        // 100-node distribution, 1e6 draws; chi-square must stay below the
        // 0.999 quantile for 99 degrees of freedom (~148.2).
        let weights: Vec<f64> = (1..=100).map(|i| i as f64).collect();
        let d = NoiseDistribution::from_weights(&weights, 0.75).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let draws = 1_000_000usize;
        let mut counts = vec![0u64; 100];
        for _ in 0..draws {
            counts[d.sample(&mut rng)] += 1;
        }
        let chi2: f64 = counts
            .iter()
            .zip(&d.probabilities)
            .map(|(&c, &p)| {
                let expected = p * draws as f64;
                let diff = c as f64 - expected;
                diff * diff / expected
            })
            .sum();
        assert!(chi2 < 148.3, "chi-square statistic {chi2}");
    }
}

