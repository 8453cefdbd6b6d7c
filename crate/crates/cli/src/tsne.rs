//! Exact (O(N²)) t-SNE for projecting sentence embeddings to two dimensions.
//!
//! The projection follows the classic recipe: per-point Gaussian bandwidths
//! calibrated by binary search to a target perplexity, symmetrized input
//! affinities, a Student-t kernel in the plane, and gradient descent with
//! momentum, adaptive per-coordinate gains, and an early-exaggeration phase.
//! Everything is deterministic for a fixed seed.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Fewer points than this cannot support a meaningful neighborhood structure.
pub const MIN_POINTS: usize = 5;

/// Affinity floor keeping logs and divisions finite.
const EPS: f64 = 1e-12;

/// Tuning knobs for [`project`]; `Default` matches the common reference
/// settings (perplexity 30, 1000 iterations).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    /// Input affinities are multiplied by this during the first
    /// `exaggeration_iters` iterations to form tight early clusters.
    pub early_exaggeration: f64,
    pub exaggeration_iters: usize,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    /// Iteration at which momentum switches from initial to final.
    pub momentum_switch: usize,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> TsneConfig {
        TsneConfig {
            perplexity: 30.0,
            iterations: 1000,
            learning_rate: 200.0,
            early_exaggeration: 12.0,
            exaggeration_iters: 250,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            momentum_switch: 250,
            seed: 0,
        }
    }
}

impl TsneConfig {
    pub fn with_perplexity(mut self, perplexity: f64) -> TsneConfig {
        self.perplexity = perplexity;
        self
    }

    pub fn with_iterations(mut self, iterations: usize) -> TsneConfig {
        self.iterations = iterations;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> TsneConfig {
        self.seed = seed;
        self
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TsneError {
    #[error("{found} points cannot support the projection: need at least {required} (≥{MIN_POINTS} and more than the perplexity)")]
    TooFewPoints { found: usize, required: usize },
    #[error("point {index} has dimension {found}, expected {expected}")]
    DimensionMismatch {
        index: usize,
        found: usize,
        expected: usize,
    },
    #[error("invalid projection config: {0}")]
    InvalidConfig(String),
}

/// A finished projection: one 2-D coordinate per input point, in input order,
/// plus the final Kullback–Leibler objective value for diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TsneEmbedding {
    pub coordinates: Vec<[f64; 2]>,
    pub kl_divergence: f64,
}

fn validate(points: &[Vec<f64>], config: &TsneConfig) -> Result<(), TsneError> {
    if !(config.perplexity > 0.0) || !config.perplexity.is_finite() {
        return Err(TsneError::InvalidConfig(
            "perplexity must be positive and finite".into(),
        ));
    }
    if config.iterations == 0 {
        return Err(TsneError::InvalidConfig("iterations must be ≥ 1".into()));
    }
    if !(config.learning_rate > 0.0) {
        return Err(TsneError::InvalidConfig(
            "learning_rate must be positive".into(),
        ));
    }
    for m in [
        config.initial_momentum,
        config.final_momentum,
        config.early_exaggeration,
    ] {
        if !(m >= 0.0) || !m.is_finite() {
            return Err(TsneError::InvalidConfig(
                "momentum and exaggeration must be finite and non-negative".into(),
            ));
        }
    }
    // The Gaussian neighborhood around a point has at most n-1 members, so
    // the perplexity (its effective size) must stay below the point count.
    let required = MIN_POINTS.max(config.perplexity.floor() as usize + 1);
    if points.len() < required {
        return Err(TsneError::TooFewPoints {
            found: points.len(),
            required,
        });
    }
    let expected = points[0].len();
    if expected == 0 {
        return Err(TsneError::InvalidConfig(
            "points must have at least one dimension".into(),
        ));
    }
    for (index, p) in points.iter().enumerate() {
        if p.len() != expected {
            return Err(TsneError::DimensionMismatch {
                index,
                found: p.len(),
                expected,
            });
        }
    }
    Ok(())
}

/// Pairwise squared Euclidean distances.
fn squared_distances(points: &[Vec<f64>]) -> Array2<f64> {
    let n = points.len();
    let mut d2 = Array2::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            let d: f64 = points[i]
                .iter()
                .zip(&points[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            d2[[i, j]] = d;
            d2[[j, i]] = d;
        }
    }
    d2
}

/// Normalized conditional affinities p_{j|i} for one row at bandwidth `beta`
/// (= 1/(2σ²)), together with their Shannon entropy in nats. Weights are
/// shifted by the row minimum before exponentiation; the normalized
/// distribution (and therefore the entropy) is invariant to the shift, which
/// keeps large betas from underflowing the whole row to zero.
fn conditional_row(d2_row: &[f64], skip: usize, beta: f64) -> (f64, Vec<f64>) {
    let min_d2 = d2_row
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != skip)
        .map(|(_, &d)| d)
        .fold(f64::INFINITY, f64::min);
    let mut weights: Vec<f64> = d2_row
        .iter()
        .enumerate()
        .map(|(j, &d)| {
            if j == skip {
                0.0
            } else {
                (-beta * (d - min_d2)).exp()
            }
        })
        .collect();
    let sum: f64 = weights.iter().sum();
    let mut entropy = 0.0;
    for w in &mut weights {
        *w /= sum;
        if *w > 0.0 {
            entropy -= *w * w.ln();
        }
    }
    (entropy, weights)
}

/// Binary-search each row's bandwidth until the conditional distribution's
/// perplexity matches the target, then return the row-stochastic matrix.
fn conditional_affinities(d2: &Array2<f64>, perplexity: f64) -> Array2<f64> {
    let n = d2.nrows();
    let target_entropy = perplexity.ln();
    let mut p = Array2::zeros((n, n));
    for i in 0..n {
        let row: Vec<f64> = d2.row(i).to_vec();
        let mut beta = 1.0;
        let mut beta_min = f64::NEG_INFINITY;
        let mut beta_max = f64::INFINITY;
        let mut best = conditional_row(&row, i, beta);
        for _ in 0..50 {
            let diff = best.0 - target_entropy;
            if diff.abs() < 1e-5 {
                break;
            }
            if diff > 0.0 {
                // Entropy too high: the kernel is too wide, sharpen it.
                beta_min = beta;
                beta = if beta_max.is_infinite() {
                    beta * 2.0
                } else {
                    (beta + beta_max) / 2.0
                };
            } else {
                beta_max = beta;
                beta = if beta_min.is_infinite() {
                    beta / 2.0
                } else {
                    (beta + beta_min) / 2.0
                };
            }
            best = conditional_row(&row, i, beta);
        }
        for (j, w) in best.1.into_iter().enumerate() {
            p[[i, j]] = w;
        }
    }
    p
}

/// Standard-normal draw via Box–Muller from the seeded uniform stream.
fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Project `points` to two dimensions. Coordinates come back in input order;
/// identical inputs and config yield identical output.
pub fn project(points: &[Vec<f64>], config: &TsneConfig) -> Result<TsneEmbedding, TsneError> {
    validate(points, config)?;
    let n = points.len();

    // Symmetrized input affinities P, floored away from zero.
    let cond = conditional_affinities(&squared_distances(points), config.perplexity);
    let mut p = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            p[[i, j]] = ((cond[[i, j]] + cond[[j, i]]) / (2.0 * n as f64)).max(EPS);
        }
        p[[i, i]] = EPS;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut y = vec![[0.0f64; 2]; n];
    for point in y.iter_mut() {
        point[0] = normal(&mut rng) * 1e-4;
        point[1] = normal(&mut rng) * 1e-4;
    }

    let mut velocity = vec![[0.0f64; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];
    let mut num = Array2::zeros((n, n));
    let mut final_kl = f64::NAN;

    for iter in 1..=config.iterations {
        let exaggeration = if iter <= config.exaggeration_iters {
            config.early_exaggeration
        } else {
            1.0
        };
        let momentum = if iter <= config.momentum_switch {
            config.initial_momentum
        } else {
            config.final_momentum
        };

        // Student-t numerators 1/(1+‖y_i−y_j‖²) and their total.
        let mut num_sum = 0.0;
        for i in 0..n {
            num[[i, i]] = 0.0;
            for j in (i + 1)..n {
                let dx = y[i][0] - y[j][0];
                let dy = y[i][1] - y[j][1];
                let t = 1.0 / (1.0 + dx * dx + dy * dy);
                num[[i, j]] = t;
                num[[j, i]] = t;
                num_sum += 2.0 * t;
            }
        }
        let num_sum = num_sum.max(EPS);

        // All gradients are taken against the same frozen layout, then
        // applied together, so point order cannot influence the step.
        let mut kl = 0.0;
        let mut grads = vec![[0.0f64; 2]; n];
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let q = (num[[i, j]] / num_sum).max(EPS);
                let coeff = 4.0 * (exaggeration * p[[i, j]] - q) * num[[i, j]];
                grads[i][0] += coeff * (y[i][0] - y[j][0]);
                grads[i][1] += coeff * (y[i][1] - y[j][1]);
                kl += p[[i, j]] * (p[[i, j]] / q).ln();
            }
        }
        for i in 0..n {
            for axis in 0..2 {
                // Gains grow when the gradient keeps pushing against the
                // current velocity and shrink when it agrees — the classic
                // sign-adaptive step-size schedule.
                let agrees = grads[i][axis].signum() == velocity[i][axis].signum();
                gains[i][axis] = if agrees {
                    (gains[i][axis] * 0.8).max(0.01)
                } else {
                    gains[i][axis] + 0.2
                };
                velocity[i][axis] = momentum * velocity[i][axis]
                    - config.learning_rate * gains[i][axis] * grads[i][axis];
                y[i][axis] += velocity[i][axis];
            }
        }
        final_kl = kl;

        // Re-center so the embedding cannot drift.
        let mean_x: f64 = y.iter().map(|p| p[0]).sum::<f64>() / n as f64;
        let mean_y: f64 = y.iter().map(|p| p[1]).sum::<f64>() / n as f64;
        for point in y.iter_mut() {
            point[0] -= mean_x;
            point[1] -= mean_y;
        }
    }

    Ok(TsneEmbedding {
        coordinates: y,
        kl_divergence: final_kl,
    })
}

/// Convex hull of a 2-D point set (monotone chain), counter-clockwise,
/// without collinear interior points. Used as the oracle for "projected
/// clusters stay separated".
pub fn convex_hull(points: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut pts: Vec<[f64; 2]> = points.to_vec();
    pts.sort_by(|a, b| a.partial_cmp(b).expect("finite coordinates"));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: [f64; 2], a: [f64; 2], b: [f64; 2]| {
        (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
    };
    let half_chain = |points: &mut dyn Iterator<Item = [f64; 2]>| {
        let mut chain: Vec<[f64; 2]> = Vec::new();
        for p in points {
            while chain.len() >= 2 && cross(chain[chain.len() - 2], chain[chain.len() - 1], p) <= 0.0
            {
                chain.pop();
            }
            chain.push(p);
        }
        // The chain's last point starts the other half.
        chain.pop();
        chain
    };
    let mut hull = half_chain(&mut pts.iter().copied());
    hull.extend(half_chain(&mut pts.iter().rev().copied()));
    hull
}

/// Whether two convex polygons are disjoint, by the separating-axis test:
/// disjoint iff some edge normal of either polygon separates the projections.
pub fn hulls_disjoint(a: &[[f64; 2]], b: &[[f64; 2]]) -> bool {
    if a.is_empty() || b.is_empty() {
        return true;
    }
    let project = |poly: &[[f64; 2]], axis: [f64; 2]| {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for p in poly {
            let v = p[0] * axis[0] + p[1] * axis[1];
            lo = lo.min(v);
            hi = hi.max(v);
        }
        (lo, hi)
    };
    let separated_by_edges = |poly: &[[f64; 2]], other: &[[f64; 2]]| {
        for i in 0..poly.len() {
            let p = poly[i];
            let q = poly[(i + 1) % poly.len()];
            let axis = [q[1] - p[1], p[0] - q[0]];
            if axis[0] == 0.0 && axis[1] == 0.0 {
                continue;
            }
            let (a_lo, a_hi) = project(poly, axis);
            let (b_lo, b_hi) = project(other, axis);
            if a_hi < b_lo || b_hi < a_lo {
                return true;
            }
        }
        false
    };
    separated_by_edges(a, b) || separated_by_edges(b, a)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gaussian_cluster(
        rng: &mut ChaCha8Rng,
        center: &[f64],
        spread: f64,
        count: usize,
    ) -> Vec<Vec<f64>> {
        (0..count)
            .map(|_| {
                center
                    .iter()
                    .map(|&c| c + spread * normal(rng))
                    .collect::<Vec<f64>>()
            })
            .collect()
    }

    fn quick_config() -> TsneConfig {
        TsneConfig {
            perplexity: 10.0,
            iterations: 400,
            exaggeration_iters: 120,
            momentum_switch: 120,
            ..TsneConfig::default()
        }
    }

    #[test]
    fn rejects_too_few_points() {
        let points: Vec<Vec<f64>> = (0..3).map(|i| vec![i as f64, 0.0]).collect();
        let config = TsneConfig::default().with_perplexity(5.0);
        match project(&points, &config) {
            Err(TsneError::TooFewPoints { found: 3, required }) => {
                assert!(required >= MIN_POINTS);
            }
            other => panic!("expected TooFewPoints, got {other:?}"),
        }
    }

    #[test]
    fn rejects_perplexity_at_or_above_point_count() {
        let points: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, 1.0]).collect();
        let config = TsneConfig::default().with_perplexity(6.0);
        match project(&points, &config) {
            Err(TsneError::TooFewPoints { found: 6, required: 7 }) => {}
            other => panic!("expected TooFewPoints, got {other:?}"),
        }
    }

    #[test]
    fn rejects_ragged_input() {
        let mut points: Vec<Vec<f64>> = (0..8).map(|i| vec![i as f64, 0.0, 1.0]).collect();
        points[5] = vec![1.0];
        match project(&points, &quick_config().with_perplexity(3.0)) {
            Err(TsneError::DimensionMismatch {
                index: 5,
                found: 1,
                expected: 3,
            }) => {}
            other => panic!("expected DimensionMismatch, got {other:?}"),
        }
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let points = gaussian_cluster(&mut rng, &vec![0.0; 16], 1.0, 40);
        let config = quick_config().with_seed(42);
        let a = project(&points, &config).unwrap();
        let b = project(&points, &config).unwrap();
        assert_eq!(a.coordinates, b.coordinates);
        assert_eq!(a.kl_divergence, b.kl_divergence);

        let c = project(&points, &config.with_seed(43)).unwrap();
        assert_ne!(a.coordinates, c.coordinates, "seed must matter");
    }

    #[test]
    fn conditional_rows_hit_target_perplexity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let points = gaussian_cluster(&mut rng, &vec![0.0; 8], 1.0, 60);
        let d2 = squared_distances(&points);
        let perplexity = 15.0;
        let p = conditional_affinities(&d2, perplexity);
        for i in 0..points.len() {
            let row: Vec<f64> = p.row(i).to_vec();
            let entropy: f64 = row
                .iter()
                .filter(|&&w| w > 0.0)
                .map(|&w| -w * w.ln())
                .sum();
            let achieved = entropy.exp();
            assert!(
                (achieved - perplexity).abs() < 0.05,
                "row {i}: perplexity {achieved} vs target {perplexity}"
            );
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9, "row {i} sums to {sum}");
        }
    }

    #[test]
    fn separated_gaussian_clusters_project_to_disjoint_hulls() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let dim = 384;
        let mut center_a = vec![0.0; dim];
        let mut center_b = vec![0.0; dim];
        center_a[0] = 6.0;
        center_b[0] = -6.0;
        let mut points = gaussian_cluster(&mut rng, &center_a, 0.2, 30);
        points.extend(gaussian_cluster(&mut rng, &center_b, 0.2, 30));

        let result = project(&points, &quick_config().with_seed(5)).unwrap();
        let hull_a = convex_hull(&result.coordinates[..30]);
        let hull_b = convex_hull(&result.coordinates[30..]);
        assert!(
            hulls_disjoint(&hull_a, &hull_b),
            "clusters overlap: {hull_a:?} vs {hull_b:?}"
        );
    }

    #[test]
    fn projection_separates_better_than_random_start() {
        // The mean within-cluster distance should end up well below the mean
        // between-cluster distance.
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mut center_b = vec![0.0; 32];
        center_b[3] = 8.0;
        let mut points = gaussian_cluster(&mut rng, &vec![0.0; 32], 0.3, 25);
        points.extend(gaussian_cluster(&mut rng, &center_b, 0.3, 25));
        let result = project(&points, &quick_config().with_seed(1)).unwrap();
        let dist = |a: [f64; 2], b: [f64; 2]| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
        let mut within = Vec::new();
        let mut between = Vec::new();
        for i in 0..50 {
            for j in (i + 1)..50 {
                let d = dist(result.coordinates[i], result.coordinates[j]);
                if (i < 25) == (j < 25) {
                    within.push(d);
                } else {
                    between.push(d);
                }
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(
            mean(&between) > 3.0 * mean(&within),
            "between {} vs within {}",
            mean(&between),
            mean(&within)
        );
        assert!(result.kl_divergence.is_finite());
    }

    #[test]
    fn hull_helpers_handle_degenerate_and_overlapping_sets() {
        let square: Vec<[f64; 2]> = vec![[0.0, 0.0], [2.0, 0.0], [2.0, 2.0], [0.0, 2.0]];
        let hull = convex_hull(&square);
        assert_eq!(hull.len(), 4);

        let far = convex_hull(&[[10.0, 10.0], [11.0, 10.0], [10.5, 11.0]]);
        assert!(hulls_disjoint(&hull, &far));

        let overlapping = convex_hull(&[[1.0, 1.0], [3.0, 1.0], [1.0, 3.0]]);
        assert!(!hulls_disjoint(&hull, &overlapping));

        // One polygon fully inside the other: no edge axis separates them.
        let inner = convex_hull(&[[0.8, 0.8], [1.2, 0.8], [1.0, 1.2]]);
        assert!(!hulls_disjoint(&hull, &inner));

        let segment = convex_hull(&[[5.0, 5.0], [6.0, 6.0]]);
        assert_eq!(segment.len(), 2);
        assert!(hulls_disjoint(&hull, &segment));
    }
}
