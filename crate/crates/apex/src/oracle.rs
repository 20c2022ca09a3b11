//! Analytic conditional data distributions used as ground truth.
//!
//! Each condition owns a mixture of isotropic Gaussians. Everything the
//! rest of the crate needs from a data distribution is available in closed
//! form:
//!
//! - exact `(x, z)` pair sampling against the standard-normal prior,
//! - the exact marginal score at any interpolation time, using that a
//!   component `N(μ, σ²I)` has time-`t` marginal `N((1−t)μ, ((1−t)²σ² + t²)I)`,
//! - the exact conditional-mean velocity `E[z − x | x_t]` by direct Gaussian
//!   conditioning of the joint `(x, z, x_t)`, responsibility-weighted across
//!   components. This derivation never touches the score–velocity bridge in
//!   [`crate::path`], so the bridge can be certified against it without
//!   circularity.
//!
//! Distributions are immutable after construction and all queries are pure;
//! sampling mutates only the generator passed by the caller.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{ensure_same_dim, ApexError, Result};

/// One isotropic Gaussian component of a condition's mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianComponent {
    /// Mixture weight; weights of a condition sum to one.
    pub weight: f64,
    /// Component mean.
    pub mean: Vec<f64>,
    /// Component standard deviation, strictly positive.
    pub stdev: f64,
}

/// Analytic conditional data distribution: one Gaussian mixture per condition.
#[derive(Debug, Clone)]
pub struct OracleDist {
    conditions: Vec<Vec<GaussianComponent>>,
    dim: usize,
}

/// Maximum supported data dimension. Identities are dimension-generic; this
/// bound just keeps lattice-based certification grids affordable.
pub const MAX_DIM: usize = 8;

impl OracleDist {
    /// Validates and wraps per-condition component lists.
    pub fn new(conditions: Vec<Vec<GaussianComponent>>) -> Result<Self> {
        if conditions.is_empty() {
            return Err(ApexError::InvalidArgument(
                "at least one condition is required".into(),
            ));
        }
        let dim = conditions
            .first()
            .and_then(|c| c.first())
            .map(|comp| comp.mean.len())
            .ok_or_else(|| {
                ApexError::InvalidArgument("conditions must have at least one component".into())
            })?;
        if dim == 0 || dim > MAX_DIM {
            return Err(ApexError::InvalidArgument(format!(
                "data dimension must be in 1..={MAX_DIM}, got {dim}"
            )));
        }
        for (k, comps) in conditions.iter().enumerate() {
            if comps.is_empty() {
                return Err(ApexError::InvalidArgument(format!(
                    "condition {k} has no components"
                )));
            }
            let total: f64 = comps.iter().map(|c| c.weight).sum();
            if (total - 1.0).abs() > 1e-12 {
                return Err(ApexError::InvalidArgument(format!(
                    "condition {k} weights sum to {total}, expected 1"
                )));
            }
            for comp in comps {
                if comp.weight < 0.0 {
                    return Err(ApexError::InvalidArgument(format!(
                        "condition {k} has a negative weight"
                    )));
                }
                if !(comp.stdev > 0.0) {
                    return Err(ApexError::InvalidArgument(format!(
                        "condition {k} has non-positive stdev {}",
                        comp.stdev
                    )));
                }
                ensure_same_dim("OracleDist component mean", dim, comp.mean.len())?;
            }
        }
        Ok(Self { conditions, dim })
    }

    /// Single Gaussian per condition, a common toy setup.
    pub fn single_gaussians(means: Vec<Vec<f64>>, stdev: f64) -> Result<Self> {
        Self::new(
            means
                .into_iter()
                .map(|mean| {
                    vec![GaussianComponent {
                        weight: 1.0,
                        mean,
                        stdev,
                    }]
                })
                .collect(),
        )
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of conditions K.
    pub fn num_conditions(&self) -> usize {
        self.conditions.len()
    }

    pub fn components(&self, cond: usize) -> Result<&[GaussianComponent]> {
        self.conditions
            .get(cond)
            .map(|c| c.as_slice())
            .ok_or_else(|| {
                ApexError::InvalidArgument(format!(
                    "condition {cond} out of range 0..{}",
                    self.conditions.len()
                ))
            })
    }

    /// True iff every condition is a single Gaussian component.
    pub fn is_single_gaussian(&self) -> bool {
        self.conditions.iter().all(|c| c.len() == 1)
    }

    /// Draws a data sample from the condition's mixture.
    pub fn sample_data<R: Rng + ?Sized>(&self, cond: usize, rng: &mut R) -> Result<Vec<f64>> {
        let comps = self.components(cond)?;
        let pick: f64 = rng.gen();
        let mut acc = 0.0;
        let mut chosen = comps.len() - 1;
        for (i, comp) in comps.iter().enumerate() {
            acc += comp.weight;
            if pick < acc {
                chosen = i;
                break;
            }
        }
        let comp = &comps[chosen];
        Ok((0..self.dim)
            .map(|i| comp.mean[i] + comp.stdev * rng.sample::<f64, _>(StandardNormal))
            .collect())
    }

    /// Draws a `(x, z)` training pair: `x` from the condition's mixture and
    /// `z` independently from the standard normal prior. Deterministic given
    /// the generator state.
    pub fn sample_pair<R: Rng + ?Sized>(
        &self,
        cond: usize,
        rng: &mut R,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let x = self.sample_data(cond, rng)?;
        let z = (0..self.dim)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        Ok((x, z))
    }

    /// Per-component marginal variance at time `t`: `(1−t)²σ² + t²`.
    fn marginal_var(comp: &GaussianComponent, t: f64) -> f64 {
        let g = 1.0 - t;
        g * g * comp.stdev * comp.stdev + t * t
    }

    /// Log responsibilities of each component for `x_t` at time `t`.
    fn log_responsibilities(
        &self,
        comps: &[GaussianComponent],
        x_t: &[f64],
        t: f64,
    ) -> Result<Vec<f64>> {
        let d = self.dim as f64;
        let mut logs = Vec::with_capacity(comps.len());
        for comp in comps {
            let var = Self::marginal_var(comp, t);
            if var <= 0.0 {
                return Err(ApexError::SingularTime {
                    op: "marginal density",
                    t,
                    domain: "var > 0 (t = 0 with a zero-width component is singular)",
                });
            }
            let mut sq = 0.0;
            for (i, &xi) in x_t.iter().enumerate() {
                let delta = xi - (1.0 - t) * comp.mean[i];
                sq += delta * delta;
            }
            logs.push(comp.weight.ln() - 0.5 * sq / var - 0.5 * d * var.ln());
        }
        Ok(logs)
    }

    /// Exact log marginal density of `x_t` given the condition, up to the
    /// dimension-constant `−(d/2)·ln(2π)` which cancels in scores.
    pub fn marginal_log_density(&self, cond: usize, x_t: &[f64], t: f64) -> Result<f64> {
        let comps = self.components(cond)?;
        ensure_same_dim("marginal_log_density", self.dim, x_t.len())?;
        let logs = self.log_responsibilities(comps, x_t, t)?;
        Ok(log_sum_exp(&logs))
    }

    /// Exact score `∇ log p_t(x_t | cond)` of the time-`t` marginal.
    pub fn marginal_score(&self, cond: usize, x_t: &[f64], t: f64) -> Result<Vec<f64>> {
        let comps = self.components(cond)?;
        ensure_same_dim("marginal_score", self.dim, x_t.len())?;
        if !(0.0..=1.0).contains(&t) {
            return Err(ApexError::InvalidArgument(format!(
                "marginal_score time must lie in [0, 1], got {t}"
            )));
        }
        let logs = self.log_responsibilities(comps, x_t, t)?;
        let lse = log_sum_exp(&logs);
        let mut score = vec![0.0; self.dim];
        for (comp, &lr) in comps.iter().zip(&logs) {
            let resp = (lr - lse).exp();
            let var = Self::marginal_var(comp, t);
            for (i, s) in score.iter_mut().enumerate() {
                *s -= resp * (x_t[i] - (1.0 - t) * comp.mean[i]) / var;
            }
        }
        Ok(score)
    }

    /// Exact conditional-mean velocity `E[z − x | x_t]` at time `t`.
    ///
    /// Derived by Gaussian conditioning per component: with
    /// `u = x_t − (1−t)μ` and `s² = (1−t)²σ² + t²`,
    /// `E[x | x_t] = μ + (1−t)σ²·u/s²` and `E[z | x_t] = t·u/s²`, so the
    /// component velocity is `(t − (1−t)σ²)·u/s² − μ`.
    pub fn optimal_velocity(&self, cond: usize, x_t: &[f64], t: f64) -> Result<Vec<f64>> {
        let comps = self.components(cond)?;
        ensure_same_dim("optimal_velocity", self.dim, x_t.len())?;
        if t <= 0.0 || t >= 1.0 {
            return Err(ApexError::SingularTime {
                op: "optimal_velocity",
                t,
                domain: "(0, 1)",
            });
        }
        let logs = self.log_responsibilities(comps, x_t, t)?;
        let lse = log_sum_exp(&logs);
        let mut v = vec![0.0; self.dim];
        for (comp, &lr) in comps.iter().zip(&logs) {
            let resp = (lr - lse).exp();
            let var = Self::marginal_var(comp, t);
            let coef = (t - (1.0 - t) * comp.stdev * comp.stdev) / var;
            for (i, vi) in v.iter_mut().enumerate() {
                let u = x_t[i] - (1.0 - t) * comp.mean[i];
                *vi += resp * (coef * u - comp.mean[i]);
            }
        }
        Ok(v)
    }

    /// Self-normalized Monte-Carlo estimate of `E[z − x | x_t]`, kept as an
    /// independent cross-check of [`OracleDist::optimal_velocity`]. Draws
    /// `n` data samples and weights them by the likelihood
    /// `x_t | x ~ N((1−t)x, t²I)`; given `x`, the noise is determined as
    /// `z = (x_t − (1−t)x)/t`.
    pub fn mc_posterior_velocity<R: Rng + ?Sized>(
        &self,
        cond: usize,
        x_t: &[f64],
        t: f64,
        n: usize,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        ensure_same_dim("mc_posterior_velocity", self.dim, x_t.len())?;
        if t <= 0.0 || t >= 1.0 {
            return Err(ApexError::SingularTime {
                op: "mc_posterior_velocity",
                t,
                domain: "(0, 1)",
            });
        }
        let mut log_weights = Vec::with_capacity(n);
        let mut velocities = Vec::with_capacity(n);
        for _ in 0..n {
            let x = self.sample_data(cond, rng)?;
            let mut sq = 0.0;
            let mut v = vec![0.0; self.dim];
            for i in 0..self.dim {
                let delta = x_t[i] - (1.0 - t) * x[i];
                sq += delta * delta;
                v[i] = delta / t - x[i];
            }
            log_weights.push(-0.5 * sq / (t * t));
            velocities.push(v);
        }
        let lse = log_sum_exp(&log_weights);
        let mut out = vec![0.0; self.dim];
        for (lw, v) in log_weights.iter().zip(&velocities) {
            let w = (lw - lse).exp();
            for (o, vi) in out.iter_mut().zip(v) {
                *o += w * vi;
            }
        }
        Ok(out)
    }

    /// Mean of the condition's mixture.
    pub fn condition_mean(&self, cond: usize) -> Result<Vec<f64>> {
        let comps = self.components(cond)?;
        let mut mean = vec![0.0; self.dim];
        for comp in comps {
            for (m, &mu) in mean.iter_mut().zip(&comp.mean) {
                *m += comp.weight * mu;
            }
        }
        Ok(mean)
    }

    /// Isotropic variance of the condition's mixture: the average per-axis
    /// variance `(1/d)·tr Cov`.
    pub fn condition_isotropic_var(&self, cond: usize) -> Result<f64> {
        let comps = self.components(cond)?;
        let mean = self.condition_mean(cond)?;
        let d = self.dim as f64;
        let mut var = 0.0;
        for comp in comps {
            let spread: f64 = comp
                .mean
                .iter()
                .zip(&mean)
                .map(|(&mu, &m)| (mu - m) * (mu - m))
                .sum();
            var += comp.weight * (comp.stdev * comp.stdev + spread / d);
        }
        Ok(var)
    }
}

/// Squared 2-Wasserstein distance between isotropic Gaussians:
/// `||μ_a − μ_b||² + d·(√v_a − √v_b)²`.
///
/// ```
/// let w2 = apex::oracle::gaussian_w2(&[0.0, 0.0], 1.0, &[3.0, 4.0], 1.0).unwrap();
/// assert_eq!(w2, 25.0);
/// ```
pub fn gaussian_w2(mean_a: &[f64], var_a: f64, mean_b: &[f64], var_b: f64) -> Result<f64> {
    ensure_same_dim("gaussian_w2", mean_a.len(), mean_b.len())?;
    if var_a < 0.0 || var_b < 0.0 {
        return Err(ApexError::InvalidArgument(format!(
            "variances must be non-negative, got {var_a} and {var_b}"
        )));
    }
    let mean_sq: f64 = mean_a
        .iter()
        .zip(mean_b)
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum();
    let sig = var_a.sqrt() - var_b.sqrt();
    Ok(mean_sq + mean_a.len() as f64 * sig * sig)
}

fn log_sum_exp(logs: &[f64]) -> f64 {
    let m = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + logs.iter().map(|&l| (l - m).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::path::velocity_to_score;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn std_normal_1cond() -> OracleDist {
        OracleDist::single_gaussians(vec![vec![0.0, 0.0]], 1.0).unwrap()
    }

    #[test]
    fn new_rejects_bad_weights_and_stdev() {
        let bad_weight = OracleDist::new(vec![vec![GaussianComponent {
            weight: 0.9,
            mean: vec![0.0],
            stdev: 1.0,
        }]]);
        assert!(bad_weight.is_err());
        let bad_stdev = OracleDist::new(vec![vec![GaussianComponent {
            weight: 1.0,
            mean: vec![0.0],
            stdev: 0.0,
        }]]);
        assert!(bad_stdev.is_err());
    }

    #[test]
    fn sample_pair_rejects_out_of_range_condition() {
        let dist = std_normal_1cond();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(dist.sample_pair(1, &mut rng).is_err());
    }

    #[test]
    fn near_degenerate_component_concentrates() {
        let dist =
            OracleDist::single_gaussians(vec![vec![4.0, -3.0]], 1e-9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (x, _z) = dist.sample_pair(0, &mut rng).unwrap();
        assert!((x[0] - 4.0).abs() < 1e-6 && (x[1] + 3.0).abs() < 1e-6);
    }

    #[test]
    fn sampling_is_deterministic_and_pairs_differ() {
        let dist = std_normal_1cond();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let a = dist.sample_pair(0, &mut rng).unwrap();
        let b = dist.sample_pair(0, &mut rng).unwrap();
        assert_ne!(a, b);
        let mut rng2 = ChaCha8Rng::seed_from_u64(42);
        let a2 = dist.sample_pair(0, &mut rng2).unwrap();
        let b2 = dist.sample_pair(0, &mut rng2).unwrap();
        assert_eq!(a, a2);
        assert_eq!(b, b2);
    }

    // Law of large numbers: the empirical mean of 1e5 draws lands within
    // 0.01 of the component mean for sigma = 0.5.
    #[test]
    fn empirical_mean_matches_component_mean() {
        let dist = OracleDist::single_gaussians(vec![vec![1.0, 2.0]], 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 100_000;
        let mut mean = vec![0.0; 2];
        for _ in 0..n {
            let (x, _) = dist.sample_pair(0, &mut rng).unwrap();
            for (m, xi) in mean.iter_mut().zip(&x) {
                *m += xi / n as f64;
            }
        }
        assert!((mean[0] - 1.0).abs() < 0.01);
        assert!((mean[1] - 2.0).abs() < 0.01);
    }

    // Marginal variance at t=0.5 for a unit Gaussian is 0.25 + 0.25 = 0.5,
    // so the score at (1, 0) is -x_t / 0.5 = (-2, 0).
    #[test]
    fn marginal_score_single_component() {
        let dist = std_normal_1cond();
        let s = dist.marginal_score(0, &[1.0, 0.0], 0.5).unwrap();
        assert!((s[0] + 2.0).abs() < 1e-12 && s[1].abs() < 1e-12);
    }

    #[test]
    fn marginal_score_vanishes_at_mode() {
        let dist = OracleDist::single_gaussians(vec![vec![2.0, -1.0]], 0.7).unwrap();
        let t = 0.3;
        let mode = vec![(1.0 - t) * 2.0, (1.0 - t) * -1.0];
        let s = dist.marginal_score(0, &mode, t).unwrap();
        assert!(s.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn marginal_score_at_unit_time_is_negated_state() {
        let dist = OracleDist::new(vec![vec![
            GaussianComponent {
                weight: 0.25,
                mean: vec![5.0, 1.0],
                stdev: 0.3,
            },
            GaussianComponent {
                weight: 0.75,
                mean: vec![-4.0, 2.0],
                stdev: 1.7,
            },
        ]])
        .unwrap();
        let s = dist.marginal_score(0, &[0.4, -0.9], 1.0).unwrap();
        assert!((s[0] + 0.4).abs() < 1e-12 && (s[1] - 0.9).abs() < 1e-12);
    }

    // Central differences of the log marginal density reproduce the score.
    #[test]
    fn mixture_score_matches_central_differences() {
        let dist = OracleDist::new(vec![vec![
            GaussianComponent {
                weight: 0.3,
                mean: vec![1.0, -1.0],
                stdev: 0.6,
            },
            GaussianComponent {
                weight: 0.7,
                mean: vec![-1.5, 0.5],
                stdev: 1.2,
            },
        ]])
        .unwrap();
        let h = 1e-5;
        for &t in &[0.1, 0.5, 0.9] {
            for &x0 in &[-2.0, 0.0, 1.5] {
                for &x1 in &[-1.0, 0.5, 2.0] {
                    let x_t = [x0, x1];
                    let s = dist.marginal_score(0, &x_t, t).unwrap();
                    for i in 0..2 {
                        let mut plus = x_t;
                        plus[i] += h;
                        let mut minus = x_t;
                        minus[i] -= h;
                        let num = (dist.marginal_log_density(0, &plus, t).unwrap()
                            - dist.marginal_log_density(0, &minus, t).unwrap())
                            / (2.0 * h);
                        assert!(
                            (num - s[i]).abs() < 1e-6,
                            "t={t} x=({x0},{x1}) axis {i}: {num} vs {}",
                            s[i]
                        );
                    }
                }
            }
        }
    }

    // For standard normal data v*(x_t, t) = (2t-1) x_t / (t^2 + (1-t)^2),
    // which vanishes at t = 0.5.
    #[test]
    fn optimal_velocity_standard_normal() {
        let dist = std_normal_1cond();
        let v = dist.optimal_velocity(0, &[3.0, -1.0], 0.5).unwrap();
        assert!(v.iter().all(|x| x.abs() < 1e-12));
        let t = 0.3;
        let v = dist.optimal_velocity(0, &[2.0, 1.0], t).unwrap();
        let coef = (2.0 * t - 1.0) / (t * t + (1.0 - t) * (1.0 - t));
        assert!((v[0] - coef * 2.0).abs() < 1e-12);
        assert!((v[1] - coef * 1.0).abs() < 1e-12);
    }

    // Near point-mass data the velocity collapses to (x_t - mu) / t.
    #[test]
    fn optimal_velocity_point_mass_limit() {
        let dist = OracleDist::single_gaussians(vec![vec![1.0, 1.0]], 1e-12).unwrap();
        let v = dist.optimal_velocity(0, &[2.0, 2.0], 0.5).unwrap();
        assert!((v[0] - 2.0).abs() < 1e-6 && (v[1] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn optimal_velocity_rejects_boundary_times() {
        let dist = std_normal_1cond();
        assert!(dist.optimal_velocity(0, &[1.0, 0.0], 0.0).is_err());
        assert!(dist.optimal_velocity(0, &[1.0, 0.0], 1.0).is_err());
    }

    // Mixture conditional mean against the self-normalized MC estimator.
    #[test]
    fn mixture_velocity_matches_mc_posterior() {
        let dist = OracleDist::new(vec![vec![
            GaussianComponent {
                weight: 0.4,
                mean: vec![2.0, 0.0],
                stdev: 0.5,
            },
            GaussianComponent {
                weight: 0.6,
                mean: vec![-1.0, 1.0],
                stdev: 0.8,
            },
        ]])
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x_t = [0.5, 0.5];
        let t = 0.45;
        let exact = dist.optimal_velocity(0, &x_t, t).unwrap();
        let mc = dist
            .mc_posterior_velocity(0, &x_t, t, 1_000_000, &mut rng)
            .unwrap();
        for (e, m) in exact.iter().zip(&mc) {
            assert!((e - m).abs() < 0.02, "exact {e} vs mc {m}");
        }
    }

    #[test]
    fn w2_basics() {
        assert_eq!(gaussian_w2(&[1.0, 2.0], 0.7, &[1.0, 2.0], 0.7).unwrap(), 0.0);
        assert_eq!(gaussian_w2(&[0.0, 0.0], 1.0, &[3.0, 4.0], 1.0).unwrap(), 25.0);
        assert_eq!(gaussian_w2(&[1.0, 1.0], 1.0, &[1.0, 1.0], 4.0).unwrap(), 2.0);
        assert!(gaussian_w2(&[0.0], -1.0, &[0.0], 1.0).is_err());
    }

    // Duality certification on single Gaussians: mapping the independently
    // derived conditional-mean velocity through the velocity->score bridge
    // reproduces the closed-form marginal score.
    #[test]
    fn duality_holds_on_grid() {
        let dist = OracleDist::single_gaussians(vec![vec![1.0, -0.5]], 0.8).unwrap();
        let mut max_err: f64 = 0.0;
        for k in 1..=19 {
            let t = 0.05 * k as f64;
            for &x0 in &[-3.0, -1.5, 0.0, 1.5, 3.0] {
                for &x1 in &[-3.0, -1.5, 0.0, 1.5, 3.0] {
                    let x_t = [x0, x1];
                    let v = dist.optimal_velocity(0, &x_t, t).unwrap();
                    let via_velocity = velocity_to_score(&v, &x_t, t).unwrap();
                    let direct = dist.marginal_score(0, &x_t, t).unwrap();
                    for (a, b) in via_velocity.iter().zip(&direct) {
                        max_err = max_err.max((a - b).abs());
                    }
                }
            }
        }
        assert!(max_err < 1e-8, "max duality error {max_err}");
    }

    // Empirical moments of x_t match (1-t) mu and (1-t)^2 sigma^2 + t^2.
    #[test]
    fn interpolant_moments_match_marginal() {
        let dist = OracleDist::single_gaussians(vec![vec![2.0, -1.0]], 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let t = 0.4;
        let n = 200_000;
        let mut mean = vec![0.0; 2];
        let mut second = vec![0.0; 2];
        for _ in 0..n {
            let (x, z) = dist.sample_pair(0, &mut rng).unwrap();
            for i in 0..2 {
                let xt = t * z[i] + (1.0 - t) * x[i];
                mean[i] += xt / n as f64;
                second[i] += xt * xt / n as f64;
            }
        }
        let want_var = (1.0 - t) * (1.0 - t) * 0.25 + t * t;
        let mean_se = (want_var / n as f64).sqrt();
        let var_se = want_var * (2.0 / n as f64).sqrt();
        for i in 0..2 {
            let want_mean = (1.0 - t) * if i == 0 { 2.0 } else { -1.0 };
            assert!((mean[i] - want_mean).abs() < 3.0 * mean_se);
            let var = second[i] - mean[i] * mean[i];
            assert!((var - want_var).abs() < 3.0 * var_se);
        }
    }

    #[test]
    fn condition_moments_of_mixture() {
        let dist = OracleDist::new(vec![vec![
            GaussianComponent {
                weight: 0.5,
                mean: vec![1.0, 0.0],
                stdev: 0.5,
            },
            GaussianComponent {
                weight: 0.5,
                mean: vec![-1.0, 0.0],
                stdev: 0.5,
            },
        ]])
        .unwrap();
        let mean = dist.condition_mean(0).unwrap();
        assert!(mean[0].abs() < 1e-15 && mean[1].abs() < 1e-15);
        // per-axis average variance: 0.25 + (1/2)(1 + 1)/2 = 0.75
        let var = dist.condition_isotropic_var(0).unwrap();
        assert!((var - 0.75).abs() < 1e-12);
    }
}
