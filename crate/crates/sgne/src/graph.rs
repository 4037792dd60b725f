//! Undirected graph storage, edge-list ingestion and configuration-model
//! generation of scale-free graphs.
//!
//! Node ids are dense integers `0..N-1`; original string labels are kept in
//! a side table. Edges are stored once with `src < dst` and the weighted
//! degree counts both endpoints, so `total_degree == 2 * sum of edge weights`.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};

/// Single undirected edge, stored once with `src < dst`.
#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub weight: f64,
}

/// Immutable undirected graph. Construction is single-threaded; the
/// finished value is safe to share read-only across threads.
#[derive(Debug, Clone)]
pub struct Graph {
    labels: Vec<String>,
    edges: Vec<Edge>,
    degrees: Vec<f64>,
    total_degree: f64,
    offsets: Vec<usize>,
    neighbors: Vec<(usize, f64)>,
    /// Running sums of neighbor weights, aligned with `neighbors`, for
    /// O(log deg) weighted neighbor sampling during walks.
    cumulative: Vec<f64>,
}

/// What ingestion dropped or merged, plus headline statistics.
#[derive(Debug, Clone, Default, Serialize)]
pub struct IngestSummary {
    pub node_count: usize,
    pub edge_count: usize,
    pub avg_degree: f64,
    pub dropped_self_loops: usize,
    pub dropped_isolated: usize,
    pub merged_duplicates: usize,
}

impl Graph {
    pub fn node_count(&self) -> usize {
        self.labels.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn degree(&self, node: usize) -> f64 {
        self.degrees[node]
    }

    pub fn degrees(&self) -> &[f64] {
        &self.degrees
    }

    pub fn total_degree(&self) -> f64 {
        self.total_degree
    }

    pub fn label(&self, node: usize) -> &str {
        &self.labels[node]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn neighbors(&self, node: usize) -> &[(usize, f64)] {
        &self.neighbors[self.offsets[node]..self.offsets[node + 1]]
    }

    /// Draws a neighbor of `node` with probability proportional to edge
    /// weight. Returns `None` for nodes without neighbors.
    pub fn sample_neighbor<R: Rng>(&self, node: usize, rng: &mut R) -> Option<usize> {
        let lo = self.offsets[node];
        let hi = self.offsets[node + 1];
        if lo == hi {
            return None;
        }
        let cum = &self.cumulative[lo..hi];
        let total = *cum.last().unwrap();
        let target = rng.gen::<f64>() * total;
        let idx = cum.partition_point(|&c| c <= target).min(hi - lo - 1);
        Some(self.neighbors[lo + idx].0)
    }

    pub fn summary(&self) -> IngestSummary {
        IngestSummary {
            node_count: self.node_count(),
            edge_count: self.edge_count(),
            avg_degree: self.edge_count() as f64 / self.node_count() as f64,
            ..Default::default()
        }
    }

    /// Serializes as `label label weight` lines; `load_edge_list` on the
    /// output reproduces the graph exactly.
    pub fn write_edge_list<W: Write>(&self, out: &mut W) -> Result<()> {
        for e in &self.edges {
            writeln!(out, "{} {} {}", self.labels[e.src], self.labels[e.dst], e.weight)?;
        }
        Ok(())
    }

    /// Builds a graph over the same node set from a subset of this graph's
    /// edges. Nodes that end up with no edges are kept (needed when a model
    /// indexed by the full node set is trained on a partial edge set).
    pub fn edge_subset_keeping_nodes(&self, pairs: &[(usize, usize)]) -> Result<Graph> {
        let mut weights: HashMap<(usize, usize), f64> = HashMap::new();
        for e in &self.edges {
            weights.insert((e.src, e.dst), e.weight);
        }
        let mut map = BTreeMap::new();
        for &(a, b) in pairs {
            let key = (a.min(b), a.max(b));
            let w = weights.get(&key).copied().unwrap_or(1.0);
            map.insert(key, w);
        }
        let (graph, _) = assemble(self.labels.clone(), map, true)?;
        Ok(graph)
    }

    /// Convenience constructor used in tests and generators: merges
    /// duplicates by weight summation, drops self-loops and isolated nodes.
    pub fn from_edges(labels: Vec<String>, edges: &[(usize, usize, f64)]) -> Result<Graph> {
        let mut map = BTreeMap::new();
        for &(a, b, w) in edges {
            if a == b {
                continue;
            }
            *map.entry((a.min(b), a.max(b))).or_insert(0.0) += w;
        }
        let (graph, _) = assemble(labels, map, false)?;
        Ok(graph)
    }
}

/// Parses a whitespace-separated edge list: `src dst [weight]`, `#` starts
/// a comment. Self-loops and isolated nodes are dropped, duplicate edges
/// are merged by summing weights; with `directed_input` both orientations
/// of a pair collapse onto one undirected edge (symmetric closure).
pub fn load_edge_list<R: BufRead>(reader: R, directed_input: bool) -> Result<(Graph, IngestSummary)> {
    let _ = directed_input; // both modes canonicalize (a,b) -> (min,max)
    let mut ids: HashMap<String, usize> = HashMap::new();
    let mut labels: Vec<String> = Vec::new();
    let mut map: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut dropped_self_loops = 0usize;
    let mut merged_duplicates = 0usize;

    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() < 2 || tokens.len() > 3 {
            return Err(Error::Parse {
                line: lineno,
                message: format!("expected `src dst [weight]`, got {} tokens", tokens.len()),
            });
        }
        let weight = if tokens.len() == 3 {
            tokens[2].parse::<f64>().map_err(|_| Error::Parse {
                line: lineno,
                message: format!("invalid weight `{}`", tokens[2]),
            })?
        } else {
            1.0
        };
        if !(weight >= 0.0) || !weight.is_finite() {
            return Err(Error::Parse {
                line: lineno,
                message: format!("negative or non-finite weight {weight}"),
            });
        }
        let mut id_of = |label: &str| -> usize {
            *ids.entry(label.to_string()).or_insert_with(|| {
                labels.push(label.to_string());
                labels.len() - 1
            })
        };
        let a = id_of(tokens[0]);
        let b = id_of(tokens[1]);
        if a == b {
            dropped_self_loops += 1;
            continue;
        }
        let key = (a.min(b), a.max(b));
        if let Some(existing) = map.get_mut(&key) {
            *existing += weight;
            merged_duplicates += 1;
        } else {
            map.insert(key, weight);
        }
    }

    let (graph, dropped_isolated) = assemble(labels, map, false)?;
    let mut summary = graph.summary();
    summary.dropped_self_loops = dropped_self_loops;
    summary.dropped_isolated = dropped_isolated;
    summary.merged_duplicates = merged_duplicates;
    Ok((graph, summary))
}

/// Configuration-model generator for a power-law degree sequence
/// `P(d) proportional to d^-alpha` truncated to `[min_degree, n-1]`.
/// Self-loops and multi-edges produced by stub pairing are removed; if the
/// sampled stub count is odd one node's degree is incremented.
pub fn generate_power_law_graph(
    n: usize,
    alpha: f64,
    min_degree: usize,
    seed: u64,
) -> Result<Graph> {
    if n < 10 {
        return Err(Error::Domain(format!("need n >= 10, got {n}")));
    }
    if !(alpha > 2.0 && alpha < 3.0) {
        return Err(Error::Domain(format!("alpha must lie in (2,3), got {alpha}")));
    }
    if min_degree < 1 || min_degree >= n {
        return Err(Error::Domain(format!("min_degree {min_degree} out of range [1, n-1)")));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let max_degree = n - 1;

    // Inverse-CDF sampling over the truncated discrete power law.
    let mut cdf = Vec::with_capacity(max_degree - min_degree + 1);
    let mut acc = 0.0;
    for d in min_degree..=max_degree {
        acc += (d as f64).powf(-alpha);
        cdf.push(acc);
    }
    let total = acc;
    let mut degrees = Vec::with_capacity(n);
    for _ in 0..n {
        let u = rng.gen::<f64>() * total;
        let idx = cdf.partition_point(|&c| c <= u).min(cdf.len() - 1);
        degrees.push(min_degree + idx);
    }
    if degrees.iter().sum::<usize>() % 2 == 1 {
        let i = degrees.iter().position(|&d| d < max_degree).unwrap_or(0);
        degrees[i] += 1;
    }

    let mut stubs = Vec::with_capacity(degrees.iter().sum());
    for (node, &d) in degrees.iter().enumerate() {
        stubs.extend(std::iter::repeat_n(node, d));
    }
    stubs.shuffle(&mut rng);

    let mut map = BTreeMap::new();
    for pair in stubs.chunks_exact(2) {
        let (a, b) = (pair[0], pair[1]);
        if a == b {
            continue;
        }
        map.entry((a.min(b), a.max(b))).or_insert(1.0);
    }

    let labels = (0..n).map(|i| i.to_string()).collect();
    let (graph, _) = assemble(labels, map, false)?;
    Ok(graph)
}

/// Random graph with `communities` planted groups: node pairs inside a
/// group link with probability `p_in`, pairs across groups with `p_out`.
/// Returns the graph and the community id of every surviving node.
pub fn generate_community_graph(
    n: usize,
    communities: usize,
    p_in: f64,
    p_out: f64,
    seed: u64,
) -> Result<(Graph, Vec<usize>)> {
    if n < 10 {
        return Err(Error::Domain(format!("need n >= 10, got {n}")));
    }
    if communities < 2 || communities > n {
        return Err(Error::Domain(format!("communities {communities} out of range [2, n]")));
    }
    for (name, p) in [("p_in", p_in), ("p_out", p_out)] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Domain(format!("{name} must be in [0,1], got {p}")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let group = |node: usize| node * communities / n;
    let mut map = BTreeMap::new();
    for a in 0..n {
        for b in (a + 1)..n {
            let p = if group(a) == group(b) { p_in } else { p_out };
            if rng.gen::<f64>() < p {
                map.insert((a, b), 1.0);
            }
        }
    }
    let labels: Vec<String> = (0..n).map(|i| i.to_string()).collect();
    let (graph, _) = assemble(labels, map, false)?;
    // Isolated nodes were dropped with a dense remap; recover communities
    // through the surviving labels (original node ids).
    let memberships = graph
        .labels()
        .iter()
        .map(|l| group(l.parse::<usize>().expect("numeric synthetic label")))
        .collect();
    Ok((graph, memberships))
}

/// Shared finalization: drops zero-weight pairs, optionally drops isolated
/// nodes (remapping ids densely), and builds CSR adjacency.
fn assemble(
    labels: Vec<String>,
    pairs: BTreeMap<(usize, usize), f64>,
    keep_isolated: bool,
) -> Result<(Graph, usize)> {
    let pairs: BTreeMap<(usize, usize), f64> =
        pairs.into_iter().filter(|&(_, w)| w > 0.0).collect();
    if pairs.is_empty() {
        return Err(Error::EmptyInput);
    }

    let n_raw = labels.len();
    let mut degree_raw = vec![0.0f64; n_raw];
    for (&(a, b), &w) in &pairs {
        degree_raw[a] += w;
        degree_raw[b] += w;
    }

    let (labels, remap, dropped) = if keep_isolated {
        (labels, (0..n_raw).collect::<Vec<_>>(), 0)
    } else {
        let mut remap = vec![usize::MAX; n_raw];
        let mut kept = Vec::new();
        let mut next = 0usize;
        for (i, label) in labels.into_iter().enumerate() {
            if degree_raw[i] > 0.0 {
                remap[i] = next;
                next += 1;
                kept.push(label);
            }
        }
        let dropped = n_raw - next;
        let remap = remap;
        // Invert into old->new lookup retained below via closure on `remap`.
        return assemble_remapped(kept, pairs, remap, dropped);
    };

    assemble_remapped(labels, pairs, remap, dropped)
}

fn assemble_remapped(
    labels: Vec<String>,
    pairs: BTreeMap<(usize, usize), f64>,
    remap: Vec<usize>,
    dropped: usize,
) -> Result<(Graph, usize)> {
    let n = labels.len();
    let mut edges = Vec::with_capacity(pairs.len());
    let mut degrees = vec![0.0f64; n];
    for (&(a, b), &w) in &pairs {
        let (a, b) = (remap[a], remap[b]);
        edges.push(Edge { src: a, dst: b, weight: w });
        degrees[a] += w;
        degrees[b] += w;
    }
    let total_degree: f64 = degrees.iter().sum();

    let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for e in &edges {
        adj[e.src].push((e.dst, e.weight));
        adj[e.dst].push((e.src, e.weight));
    }
    let mut offsets = Vec::with_capacity(n + 1);
    let mut neighbors = Vec::new();
    let mut cumulative = Vec::new();
    offsets.push(0);
    for list in &mut adj {
        list.sort_unstable_by_key(|a| a.0);
        let mut acc = 0.0;
        for &(nbr, w) in list.iter() {
            acc += w;
            neighbors.push((nbr, w));
            cumulative.push(acc);
        }
        offsets.push(neighbors.len());
    }

    Ok((
        Graph { labels, edges, degrees, total_degree, offsets, neighbors, cumulative },
        dropped,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn load(text: &str) -> (Graph, IngestSummary) {
        load_edge_list(Cursor::new(text), false).unwrap()
    }

    #[test]
    fn two_edge_path() {
        let (g, s) = load("a b\nb c");
        assert_eq!(g.node_count(), 3);
        assert_eq!(g.edge_count(), 2);
        assert_eq!(g.degrees(), &[1.0, 2.0, 1.0]);
        assert_eq!(s.avg_degree, 2.0 / 3.0);
    }

    #[test]
    fn self_loop_dropped() {
        let (g, s) = load("a a\na b");
        assert_eq!(g.node_count(), 2);
        assert_eq!(g.edge_count(), 1);
        assert_eq!(s.dropped_self_loops, 1);
    }

    #[test]
    fn isolated_node_dropped() {
        // c only appears in a self-loop, so it vanishes and ids stay dense.
        let (g, s) = load("c c\na b");
        assert_eq!(g.node_count(), 2);
        assert_eq!(s.dropped_isolated, 1);
        assert_eq!(g.label(0), "a");
    }

    #[test]
    fn duplicates_merge_by_weight_sum() {
        let (g, s) = load("a b 1.5\nb a 2.5");
        assert_eq!(g.edge_count(), 1);
        assert_eq!(g.edges()[0].weight, 4.0);
        assert_eq!(s.merged_duplicates, 1);
    }

    #[test]
    fn malformed_lines_error_with_line_number() {
        let err = load_edge_list(Cursor::new("a b\nx\n"), false).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other:?}"),
        }
        let err = load_edge_list(Cursor::new("a b -1.0"), false).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn empty_after_filtering_errors() {
        let err = load_edge_list(Cursor::new("# nothing\na a\n"), false).unwrap_err();
        assert!(matches!(err, Error::EmptyInput));
    }

    #[test]
    fn degree_sum_is_twice_edge_weight_sum() {
        let g = generate_power_law_graph(200, 2.5, 1, 7).unwrap();
        let edge_weight: f64 = g.edges().iter().map(|e| e.weight).sum();
        assert!((g.total_degree() - 2.0 * edge_weight).abs() < 1e-9);
    }

    #[test]
    fn roundtrip_is_idempotent() {
        let (g, _) = load("a b 2\nb c\nc d 0.5");
        let mut buf = Vec::new();
        g.write_edge_list(&mut buf).unwrap();
        let (g2, _) = load_edge_list(Cursor::new(buf), false).unwrap();
        assert_eq!(g.labels(), g2.labels());
        assert_eq!(g.edges(), g2.edges());
    }

    #[test]
    fn generator_is_deterministic() {
        let a = generate_power_law_graph(10, 2.5, 1, 42).unwrap();
        let b = generate_power_law_graph(10, 2.5, 1, 42).unwrap();
        assert_eq!(a.edges(), b.edges());
    }

    #[test]
    fn generator_rejects_bad_alpha() {
        assert!(generate_power_law_graph(100, 1.9, 1, 0).is_err());
        assert!(generate_power_law_graph(100, 3.0, 1, 0).is_err());
    }

    #[test]
    fn generator_output_has_no_self_loops_or_duplicates() {
        let g = generate_power_law_graph(500, 2.2, 1, 3).unwrap();
        let mut seen = std::collections::HashSet::new();
        for e in g.edges() {
            assert_ne!(e.src, e.dst);
            assert!(seen.insert((e.src, e.dst)));
        }
    }

    #[test]
    fn power_law_monotonicity_and_tail_exponent() {
        // Fraction of degree-1 nodes exceeds degree-4 nodes, and the
        // continuous MLE tail exponent lands in [2.0, 3.0] on average.
        let mut exponents = Vec::new();
        for seed in 0..20u64 {
            let g = generate_power_law_graph(1000, 2.5, 1, seed).unwrap();
            let degs: Vec<f64> = g
                .edges()
                .iter()
                .flat_map(|e| [e.src, e.dst])
                .fold(vec![0usize; g.node_count()], |mut acc, v| {
                    acc[v] += 1;
                    acc
                })
                .into_iter()
                .map(|d| d as f64)
                .collect();
            let n1 = degs.iter().filter(|&&d| d == 1.0).count();
            let n4 = degs.iter().filter(|&&d| d == 4.0).count();
            assert!(n1 > n4, "seed {seed}: {n1} vs {n4}");
            // Hill-style MLE with the discrete half-integer correction.
            let xmin = 1.0;
            let sum: f64 = degs.iter().map(|&d| (d / (xmin - 0.5)).ln()).sum();
            exponents.push(1.0 + degs.len() as f64 / sum);
        }
        let mean = exponents.iter().sum::<f64>() / exponents.len() as f64;
        assert!((2.0..=3.0).contains(&mean), "mean exponent {mean}");
    }

    #[test]
    fn community_generator_is_deterministic_and_assortative() {
        let (a, la) = generate_community_graph(120, 4, 0.3, 0.01, 5).unwrap();
        let (b, lb) = generate_community_graph(120, 4, 0.3, 0.01, 5).unwrap();
        assert_eq!(a.edges(), b.edges());
        assert_eq!(la, lb);
        assert_eq!(la.len(), a.node_count());
        let within = a.edges().iter().filter(|e| la[e.src] == la[e.dst]).count();
        // With p_in 30x p_out almost all edges should stay inside a group.
        assert!(within * 10 > a.edge_count() * 8, "{within}/{}", a.edge_count());
    }

    #[test]
    fn community_generator_rejects_bad_inputs() {
        assert!(generate_community_graph(5, 2, 0.5, 0.1, 0).is_err());
        assert!(generate_community_graph(50, 1, 0.5, 0.1, 0).is_err());
        assert!(generate_community_graph(50, 2, 1.5, 0.1, 0).is_err());
    }

    #[test]
    fn edge_subset_keeps_node_count() {
        let (g, _) = load("a b\nb c\nc d");
        let sub = g.edge_subset_keeping_nodes(&[(0, 1)]).unwrap();
        assert_eq!(sub.node_count(), 4);
        assert_eq!(sub.edge_count(), 1);
        assert_eq!(sub.degree(3), 0.0);
    }
}
