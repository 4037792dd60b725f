//! Closed-form predictions about the trained optimum and their numerical
//! validators: the optimal pair similarity, the saturation probability on
//! scale-free graphs, a configuration-model Monte Carlo oracle, and
//! diagnostics for the perturbation strategy on smooth test losses.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::generate_power_law_graph;

/// Optimal similarity of a linked pair at the loss optimum:
/// `w / (w + (d_i d_j / D) k)`.
pub fn optimal_similarity(w: f64, d_i: f64, d_j: f64, big_d: f64, k: usize) -> Result<f64> {
    if w < 0.0 || !(d_i > 0.0) || !(d_j > 0.0) || !(big_d > 0.0) || k < 1 {
        return Err(Error::Domain(format!(
            "invalid similarity inputs w={w} d_i={d_i} d_j={d_j} D={big_d} k={k}"
        )));
    }
    let noise_mass = d_i * d_j / big_d * k as f64;
    if w == 0.0 && noise_mass == 0.0 {
        return Err(Error::Domain("both the pair weight and the noise mass are zero".into()));
    }
    Ok(w / (w + noise_mass))
}

/// Brute-force counterpart of `optimal_similarity`: maximizes the local
/// objective `w ln S + (k d_i d_j / D) ln(1 - S)` over S in (0,1) by
/// golden-section search to tolerance 1e-9.
pub fn optimal_similarity_oracle(w: f64, d_i: f64, d_j: f64, big_d: f64, k: usize) -> Result<f64> {
    optimal_similarity(w, d_i, d_j, big_d, k)?;
    let noise_mass = d_i * d_j / big_d * k as f64;
    let objective = |s: f64| w * s.ln() + noise_mass * (1.0 - s).ln();

    let inv_phi = (5.0f64.sqrt() - 1.0) / 2.0;
    let (mut lo, mut hi) = (1e-12, 1.0 - 1e-12);
    let mut c = hi - inv_phi * (hi - lo);
    let mut d = lo + inv_phi * (hi - lo);
    let (mut fc, mut fd) = (objective(c), objective(d));
    while hi - lo > 1e-9 {
        if fc > fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - inv_phi * (hi - lo);
            fc = objective(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + inv_phi * (hi - lo);
            fd = objective(d);
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Probability that a linked pair's optimal similarity reaches `gamma` on
/// a scale-free graph with tail exponent `alpha` and `edge_count` edges:
/// `((alpha-1)^2 / (2-alpha)) * (ln|E| / (2|E|)) * (R^(alpha-2) - 1)` with
/// `R = gamma k / (2 (1-gamma) |E|)`, natural logarithm throughout.
pub fn saturation_probability(alpha: f64, edge_count: usize, k: usize, gamma: f64) -> Result<f64> {
    if !(alpha > 2.0 && alpha < 3.0) {
        return Err(Error::Domain(format!("alpha must be in (2,3), got {alpha}")));
    }
    if edge_count == 0 || k == 0 {
        return Err(Error::Domain("edge_count and k must be >= 1".into()));
    }
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::Domain(format!("gamma must be in (0,1), got {gamma}")));
    }
    let e = edge_count as f64;
    let r = gamma * k as f64 / (2.0 * (1.0 - gamma) * e);
    if r >= 1.0 {
        return Err(Error::Domain(format!(
            "R = gamma k / (2 (1-gamma) |E|) = {r} >= 1; the closed form assumes R < 1 \
             (raise |E| or lower gamma/k)"
        )));
    }
    let prefactor = (alpha - 1.0).powi(2) / (2.0 - alpha);
    Ok(prefactor * (e.ln() / (2.0 * e)) * (r.powf(alpha - 2.0) - 1.0))
}

/// Expected ratio of saturated pairs to edges: `|V| (|V|-1) P / (2 |E|)`.
/// The closed form can exceed 1; callers report it raw.
pub fn expected_saturated_ratio(node_count: usize, edge_count: usize, p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Domain(format!("p must be in [0,1], got {p}")));
    }
    if edge_count == 0 {
        return Err(Error::Domain("edge_count must be >= 1".into()));
    }
    let n = node_count as f64;
    Ok(n * (n - 1.0) * p / (2.0 * edge_count as f64))
}

/// Monte Carlo oracle for the saturation closed forms: generates
/// configuration-model graphs and evaluates the optimal similarity of
/// every edge (unit weights, D = 2|E|). Returns the fraction of node
/// pairs whose similarity reaches `gamma` and the same count as a ratio
/// to the edge count, both averaged over trials.
pub fn saturation_monte_carlo(
    alpha: f64,
    node_count: usize,
    min_degree: usize,
    k: usize,
    gamma: f64,
    trials: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if trials == 0 {
        return Err(Error::Domain("trials must be >= 1".into()));
    }
    let mut prob_sum = 0.0;
    let mut ratio_sum = 0.0;
    for trial in 0..trials {
        let graph = generate_power_law_graph(
            node_count,
            alpha,
            min_degree,
            seed.wrapping_add(trial as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
        )?;
        let edges = graph.edges();
        let big_d = graph.total_degree();
        let mut saturated = 0usize;
        for e in edges {
            let d_i = graph.degrees()[e.src];
            let d_j = graph.degrees()[e.dst];
            let s = optimal_similarity(1.0, d_i, d_j, big_d, k)?;
            if s >= gamma {
                saturated += 1;
            }
        }
        let n = graph.node_count() as f64;
        prob_sum += saturated as f64 / (n * (n - 1.0) / 2.0);
        ratio_sum += saturated as f64 / edges.len() as f64;
    }
    Ok((prob_sum / trials as f64, ratio_sum / trials as f64))
}

/// Differentiable scalar test loss for the trajectory diagnostics.
pub trait SmoothLoss {
    fn value(&self, theta: &[f64]) -> f64;
    fn grad(&self, theta: &[f64]) -> Vec<f64>;
    /// Gradient Lipschitz constant when known in closed form.
    fn lipschitz(&self) -> Option<f64> {
        None
    }
}

/// L = 1/2 sum a_d theta_d^2 with positive curvatures.
pub struct QuadraticLoss {
    pub curvatures: Vec<f64>,
}

impl SmoothLoss for QuadraticLoss {
    fn value(&self, theta: &[f64]) -> f64 {
        0.5 * theta.iter().zip(&self.curvatures).map(|(t, a)| a * t * t).sum::<f64>()
    }

    fn grad(&self, theta: &[f64]) -> Vec<f64> {
        theta.iter().zip(&self.curvatures).map(|(t, a)| a * t).collect()
    }

    fn lipschitz(&self) -> Option<f64> {
        self.curvatures.iter().cloned().fold(None, |acc, a| Some(acc.map_or(a, |m: f64| m.max(a))))
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Runs the perturbation strategy on an abstract loss: at each step the
/// direction is `grad(theta) + lambda grad(theta + rho grad/||grad||)`.
/// Returns the visited points including the start.
pub fn app_trajectory(
    loss: &dyn SmoothLoss,
    theta0: &[f64],
    steps: usize,
    epsilon: f64,
    rho: f64,
    lambda: f64,
) -> Vec<Vec<f64>> {
    let mut trajectory = vec![theta0.to_vec()];
    let mut theta = theta0.to_vec();
    for _ in 0..steps {
        let g = loss.grad(&theta);
        let gn = norm(&g);
        let perturbed: Vec<f64> = if gn > 0.0 {
            theta.iter().zip(&g).map(|(t, gi)| t + rho * gi / gn).collect()
        } else {
            theta.clone()
        };
        let g2 = loss.grad(&perturbed);
        for ((t, gi), g2i) in theta.iter_mut().zip(&g).zip(&g2) {
            *t -= epsilon * (gi + lambda * g2i);
        }
        trajectory.push(theta.clone());
    }
    trajectory
}

/// One consecutive-step record of the perturbation-gap diagnostic.
#[derive(Debug, Clone, Serialize)]
pub struct GapRecord {
    pub step: usize,
    /// |max over the rho-ball of L(theta_t + n) - L(theta_{t-1})|.
    pub gap: f64,
    /// (1 + lambda epsilon l) rho delta + epsilon (1 + lambda) delta^2.
    pub bound: f64,
    pub grad_norm: f64,
    pub pass: bool,
    /// Stationary steps are recorded but never counted as failures.
    pub degenerate: bool,
}

/// Checks, for every consecutive trajectory pair, that the worst-case loss
/// within a radius-rho ball of the new point stays within the predicted
/// bound of the previous loss. The inner maximum is approximated by 20
/// projected gradient ascent steps of size rho/10; the Lipschitz constant
/// comes from the loss when available, otherwise from the trajectory's
/// steepest observed gradient change.
pub fn perturbation_gap_diagnostic(
    loss: &dyn SmoothLoss,
    trajectory: &[Vec<f64>],
    rho: f64,
    lambda: f64,
    epsilon: f64,
) -> Result<Vec<GapRecord>> {
    if trajectory.len() < 2 {
        return Err(Error::Domain("trajectory needs at least 2 points".into()));
    }
    let lipschitz = loss.lipschitz().unwrap_or_else(|| {
        trajectory
            .windows(2)
            .map(|w| {
                let dg: Vec<f64> = loss
                    .grad(&w[1])
                    .iter()
                    .zip(loss.grad(&w[0]))
                    .map(|(a, b)| a - b)
                    .collect();
                let dt: Vec<f64> = w[1].iter().zip(&w[0]).map(|(a, b)| a - b).collect();
                let dn = norm(&dt);
                if dn > 0.0 {
                    norm(&dg) / dn
                } else {
                    0.0
                }
            })
            .fold(0.0, f64::max)
    });

    let mut records = Vec::with_capacity(trajectory.len() - 1);
    for (step, pair) in trajectory.windows(2).enumerate() {
        let (prev, curr) = (&pair[0], &pair[1]);
        // Projected gradient ascent for max_{||n|| <= rho} L(curr + n).
        let mut point = curr.clone();
        let mut best = loss.value(curr);
        for _ in 0..20 {
            let g = loss.grad(&point);
            for (p, gi) in point.iter_mut().zip(&g) {
                *p += (rho / 10.0) * gi;
            }
            // Project the offset back onto the rho-ball around curr.
            let offset: Vec<f64> = point.iter().zip(curr).map(|(p, c)| p - c).collect();
            let on = norm(&offset);
            if on > rho {
                for ((p, c), o) in point.iter_mut().zip(curr).zip(&offset) {
                    *p = c + o * (rho / on);
                }
            }
            best = best.max(loss.value(&point));
        }
        let gap = (best - loss.value(prev)).abs();
        let delta = norm(&loss.grad(prev)).max(norm(&loss.grad(curr)));
        let bound =
            (1.0 + lambda * epsilon * lipschitz) * rho * delta + epsilon * (1.0 + lambda) * delta * delta;
        let degenerate = delta == 0.0;
        records.push(GapRecord {
            step,
            gap,
            bound,
            grad_norm: delta,
            pass: degenerate || gap <= bound,
            degenerate,
        });
    }
    Ok(records)
}

/// Cosine of the adversarial direction and the previous parameter
/// displacement `theta_prev - theta_t`. `None` when the displacement is
/// zero (undefined, skipped by aggregators).
pub fn alignment_cosine(n_adv: &[f64], theta_t: &[f64], theta_prev: &[f64]) -> Option<f64> {
    let disp: Vec<f64> = theta_prev.iter().zip(theta_t).map(|(p, t)| p - t).collect();
    let (dn, nn) = (norm(&disp), norm(n_adv));
    if dn == 0.0 || nn == 0.0 {
        return None;
    }
    Some(n_adv.iter().zip(&disp).map(|(a, b)| a * b).sum::<f64>() / (dn * nn))
}

/// One validated check in the report.
#[derive(Debug, Clone, Serialize)]
pub struct CheckRecord {
    pub name: String,
    pub inputs: String,
    pub closed_form: Option<f64>,
    pub oracle: Option<f64>,
    pub abs_error: Option<f64>,
    pub rel_error: Option<f64>,
    /// None marks diagnostic-only records that carry no pass criterion.
    pub pass: Option<bool>,
    pub notes: String,
}

#[derive(Debug, Clone, Serialize, Default)]
pub struct TheoryReport {
    pub records: Vec<CheckRecord>,
}

impl TheoryReport {
    pub fn all_passed(&self) -> bool {
        self.records.iter().all(|r| r.pass.unwrap_or(true))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write_table<W: std::io::Write>(&self, out: &mut W) -> Result<()> {
        writeln!(
            out,
            "{:<34} {:>14} {:>14} {:>10} {:>6}  notes",
            "check", "closed form", "oracle", "rel err", "pass"
        )?;
        for r in &self.records {
            let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.6e}"));
            writeln!(
                out,
                "{:<34} {:>14} {:>14} {:>10} {:>6}  {}",
                r.name,
                fmt(r.closed_form),
                fmt(r.oracle),
                r.rel_error.map_or("-".to_string(), |x| format!("{x:.2e}")),
                r.pass.map_or("diag", |p| if p { "yes" } else { "NO" }),
                r.notes
            )?;
        }
        Ok(())
    }
}


/// The published saturation walkthrough: alpha=2.5, |V|=1000, |E|=3000,
/// k=4, gamma=0.9. The published figure for the expected ratio is 81.6%; the
/// recomputed closed form gives ~92.2%. Both figures are reported side by
/// side without reconciliation.
pub const PUBLISHED_WORKED_RATIO: f64 = 0.816;

pub fn worked_example() -> Result<TheoryReport> {
    let mut report = TheoryReport::default();
    let p = saturation_probability(2.5, 3000, 4, 0.9)?;
    report.records.push(CheckRecord {
        name: "saturation-probability".into(),
        inputs: "alpha=2.5 |E|=3000 k=4 gamma=0.9".into(),
        closed_form: Some(p),
        oracle: None,
        abs_error: None,
        rel_error: None,
        pass: None,
        notes: "R=0.006".into(),
    });
    let ratio = expected_saturated_ratio(1000, 3000, p)?;
    report.records.push(CheckRecord {
        name: "expected-saturated-ratio".into(),
        inputs: "|V|=1000 |E|=3000".into(),
        closed_form: Some(ratio),
        oracle: Some(PUBLISHED_WORKED_RATIO),
        abs_error: Some((ratio - PUBLISHED_WORKED_RATIO).abs()),
        rel_error: None,
        pass: None,
        notes: "published figure 0.816 disagrees with the recomputation; both reported".into(),
    });
    Ok(report)
}

/// The standard validation battery behind `theory --check`.
pub fn run_standard_checks(seed: u64) -> Result<TheoryReport> {
    let mut report = TheoryReport::default();

    // Closed-form similarity against the golden-section oracle.
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let w = rng.gen_range(0.0..10.0);
        let d_i = rng.gen_range(0.5..50.0);
        let d_j = rng.gen_range(0.5..50.0);
        let big_d = rng.gen_range(10.0..10_000.0);
        let k = rng.gen_range(1..=10);
        let closed = optimal_similarity(w, d_i, d_j, big_d, k)?;
        let oracle = optimal_similarity_oracle(w, d_i, d_j, big_d, k)?;
        worst = worst.max((closed - oracle).abs());
    }
    report.records.push(CheckRecord {
        name: "optimal-similarity-vs-search".into(),
        inputs: "1000 random draws".into(),
        closed_form: Some(0.0),
        oracle: Some(worst),
        abs_error: Some(worst),
        rel_error: None,
        pass: Some(worst <= 1e-6),
        notes: "worst absolute gap to the golden-section argmax".into(),
    });

    // Saturation closed form against the configuration-model oracle.
    for alpha in [2.2, 2.5, 2.8] {
        let graph = generate_power_law_graph(1000, alpha, 3, seed ^ 0xBEEF)?;
        let e = graph.edges().len();
        let p = saturation_probability(alpha, e, 4, 0.9)?;
        let predicted = expected_saturated_ratio(1000, e, p)?;
        let (_, empirical) = saturation_monte_carlo(alpha, 1000, 3, 4, 0.9, 5, seed ^ 0xF00D)?;
        let ratio = if empirical > 0.0 { predicted / empirical } else { f64::INFINITY };
        report.records.push(CheckRecord {
            name: format!("saturation-ratio-mc-alpha-{alpha}"),
            inputs: format!("n=1000 min_degree=3 k=4 gamma=0.9 |E|~{e}"),
            closed_form: Some(predicted),
            oracle: Some(empirical),
            abs_error: Some((predicted - empirical).abs()),
            rel_error: Some(ratio),
            pass: Some((0.5..=2.0).contains(&ratio)),
            notes: "closed form is an approximation; factor-2 agreement required".into(),
        });
    }

    // Perturbation gap on the diagonal quadratic near convergence.
    let loss = QuadraticLoss { curvatures: vec![1.0, 2.0] };
    let trajectory = app_trajectory(&loss, &[3.0, 2.0], 180, 0.01, 0.01, 1.0);
    let records = perturbation_gap_diagnostic(&loss, &trajectory, 0.01, 1.0, 0.01)?;
    let initial_grad = records[0].grad_norm;
    let tail: Vec<&GapRecord> =
        records.iter().filter(|r| r.grad_norm <= 0.1 * initial_grad).collect();
    let pass_rate = tail.iter().filter(|r| r.pass).count() as f64 / tail.len().max(1) as f64;
    report.records.push(CheckRecord {
        name: "perturbation-gap-quadratic".into(),
        inputs: "curvatures (1,2), eps=0.01 rho=0.01 lambda=1".into(),
        closed_form: Some(0.95),
        oracle: Some(pass_rate),
        abs_error: None,
        rel_error: None,
        pass: Some(pass_rate >= 0.95),
        notes: format!("tail pass rate over {} near-convergence steps", tail.len()),
    });

    // Alignment of the perturbation with the previous displacement on the
    // scalar quadratic.
    let loss1 = QuadraticLoss { curvatures: vec![1.0] };
    let traj = app_trajectory(&loss1, &[1.0], 200, 0.001, 0.01, 1.0);
    let last = traj.len() - 1;
    let g = loss1.grad(&traj[last]);
    let gn = norm(&g);
    let n_adv: Vec<f64> = g.iter().map(|x| 0.01 * x / gn).collect();
    let cosine = alignment_cosine(&n_adv, &traj[last], &traj[last - 1]).unwrap_or(f64::NAN);
    report.records.push(CheckRecord {
        name: "perturbation-alignment-scalar".into(),
        inputs: "L = theta^2/2, eps=0.001".into(),
        closed_form: Some(1.0),
        oracle: Some(cosine),
        abs_error: Some((1.0 - cosine).abs()),
        rel_error: None,
        pass: Some(cosine > 0.99),
        notes: "late-trajectory perturbation tracks the previous displacement".into(),
    });

    for record in worked_example()?.records {
        report.records.push(record);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn optimal_similarity_substitutions() {
        assert!((optimal_similarity(1.0, 2.0, 3.0, 20.0, 5).unwrap() - 0.4).abs() < 1e-12);
        let near_one = optimal_similarity(1.0, 1.0, 1.0, 6000.0, 4).unwrap();
        assert!((near_one - 1.0 / (1.0 + 4.0 / 6000.0)).abs() < 1e-12);
        assert!(near_one > 0.9993);
        assert_eq!(optimal_similarity(0.0, 1.0, 1.0, 10.0, 1).unwrap(), 0.0);
        assert!(optimal_similarity(1.0, 0.0, 1.0, 10.0, 1).is_err());
    }

    #[test]
    fn oracle_matches_closed_form() {
        let oracle = optimal_similarity_oracle(1.0, 1.0, 1.0, 2.0, 1).unwrap();
        assert!((oracle - 2.0 / 3.0).abs() < 1e-7);
        // symmetry under i <-> j swap
        let a = optimal_similarity_oracle(2.0, 3.0, 7.0, 50.0, 4).unwrap();
        let b = optimal_similarity_oracle(2.0, 7.0, 3.0, 50.0, 4).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn oracle_agreement_over_random_draws() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        for _ in 0..200 {
            let w = rng.gen_range(0.01..10.0);
            let d_i = rng.gen_range(0.5..50.0);
            let d_j = rng.gen_range(0.5..50.0);
            let big_d = rng.gen_range(10.0..10_000.0);
            let k = rng.gen_range(1..=10);
            let closed = optimal_similarity(w, d_i, d_j, big_d, k).unwrap();
            let oracle = optimal_similarity_oracle(w, d_i, d_j, big_d, k).unwrap();
            assert!((closed - oracle).abs() <= 1e-6, "closed {closed} oracle {oracle}");
        }
    }

    #[test]
    fn similarity_monotonicity() {
        let base = optimal_similarity(1.0, 2.0, 3.0, 100.0, 4).unwrap();
        assert!(optimal_similarity(2.0, 2.0, 3.0, 100.0, 4).unwrap() > base);
        assert!(optimal_similarity(1.0, 3.0, 3.0, 100.0, 4).unwrap() < base);
        assert!(optimal_similarity(1.0, 2.0, 4.0, 100.0, 4).unwrap() < base);
        assert!(optimal_similarity(1.0, 2.0, 3.0, 100.0, 5).unwrap() < base);
    }

    #[test]
    fn saturation_probability_frozen_value() {
        let p = saturation_probability(2.5, 3000, 4, 0.9).unwrap();
        assert!((p - 5.539647751940815e-3).abs() < 1e-12, "p = {p}");
    }

    #[test]
    fn saturation_probability_monotone_in_gamma() {
        let p5 = saturation_probability(2.5, 3000, 4, 0.5).unwrap();
        let p7 = saturation_probability(2.5, 3000, 4, 0.7).unwrap();
        let p9 = saturation_probability(2.5, 3000, 4, 0.9).unwrap();
        assert!(p5 > p7 && p7 > p9, "{p5} {p7} {p9}");
    }

    #[test]
    fn saturation_probability_domain_errors() {
        // gamma k / (2 (1-gamma) |E|) = 1 at |E| = k/2 with gamma = 0.5.
        assert!(saturation_probability(2.5, 2, 4, 0.5).is_err());
        assert!(saturation_probability(2.0, 3000, 4, 0.9).is_err());
        assert!(saturation_probability(2.5, 3000, 4, 1.0).is_err());
    }

    #[test]
    fn expected_ratio_frozen_value() {
        let p = saturation_probability(2.5, 3000, 4, 0.9).unwrap();
        let ratio = expected_saturated_ratio(1000, 3000, p).unwrap();
        assert!((ratio - 0.9223513506981458).abs() < 1e-12, "ratio = {ratio}");
        assert_eq!(expected_saturated_ratio(1000, 3000, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn monte_carlo_is_deterministic_and_extreme_threshold_is_empty() {
        let a = saturation_monte_carlo(2.5, 200, 2, 4, 0.9, 3, 11).unwrap();
        let b = saturation_monte_carlo(2.5, 200, 2, 4, 0.9, 3, 11).unwrap();
        assert_eq!(a, b);
        // gamma so close to 1 that no finite-degree pair can reach it.
        let (p, ratio) = saturation_monte_carlo(2.5, 200, 2, 4, 0.999999, 3, 11).unwrap();
        assert_eq!(p, 0.0);
        assert_eq!(ratio, 0.0);
    }

    #[test]
    fn monte_carlo_factor_two_agreement_over_grid() {
        // The closed form is an approximation; factor-2 agreement with the
        // configuration-model oracle is the documented tolerance.
        for alpha in [2.2, 2.5, 2.8] {
            for k in [4usize, 10] {
                for gamma in [0.8, 0.9] {
                    let g = generate_power_law_graph(1000, alpha, 3, 99).unwrap();
                    let e = g.edges().len();
                    let p = saturation_probability(alpha, e, k, gamma).unwrap();
                    let predicted = expected_saturated_ratio(1000, e, p).unwrap();
                    let (_, empirical) =
                        saturation_monte_carlo(alpha, 1000, 3, k, gamma, 5, 123).unwrap();
                    let ratio = predicted / empirical;
                    assert!(
                        (0.5..=2.0).contains(&ratio),
                        "alpha {alpha} k {k} gamma {gamma}: predicted {predicted} empirical {empirical}"
                    );
                }
            }
        }
    }

    #[test]
    fn quadratic_trajectory_converges_and_gap_bound_holds_in_tail() {
        let loss = QuadraticLoss { curvatures: vec![1.0, 2.0] };
        let trajectory = app_trajectory(&loss, &[3.0, 2.0], 180, 0.01, 0.01, 1.0);
        let last = trajectory.last().unwrap();
        assert!(norm(last) < norm(&trajectory[0]));
        let records = perturbation_gap_diagnostic(&loss, &trajectory, 0.01, 1.0, 0.01).unwrap();
        let initial = records[0].grad_norm;
        let tail: Vec<_> = records.iter().filter(|r| r.grad_norm <= 0.1 * initial).collect();
        assert!(!tail.is_empty());
        let pass = tail.iter().filter(|r| r.pass).count() as f64 / tail.len() as f64;
        assert!(pass >= 0.95, "tail pass rate {pass}");
    }

    #[test]
    fn alignment_cosine_identities() {
        // n exactly equal to the displacement.
        assert!((alignment_cosine(&[1.0, -2.0], &[0.0, 0.0], &[1.0, -2.0]).unwrap() - 1.0).abs() < 1e-12);
        // orthogonal.
        assert!(alignment_cosine(&[1.0, 0.0], &[0.0, 0.0], &[0.0, 1.0]).unwrap().abs() < 1e-12);
        // zero displacement undefined.
        assert!(alignment_cosine(&[1.0], &[2.0], &[2.0]).is_none());
    }

    #[test]
    fn scalar_late_trajectory_alignment() {
        let loss = QuadraticLoss { curvatures: vec![1.0] };
        let traj = app_trajectory(&loss, &[1.0], 200, 0.001, 0.01, 1.0);
        let last = traj.len() - 1;
        let g = loss.grad(&traj[last]);
        let n_adv: Vec<f64> = g.iter().map(|x| 0.01 * x / norm(&g)).collect();
        let c = alignment_cosine(&n_adv, &traj[last], &traj[last - 1]).unwrap();
        assert!(c > 0.99, "cosine {c}");
    }

    #[test]
    fn report_serializes() {
        let report = worked_example().unwrap();
        let json = report.to_json().unwrap();
        assert!(json.contains("expected-saturated-ratio"));
        let mut buf = Vec::new();
        report.write_table(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().contains("0.816"));
    }
}
