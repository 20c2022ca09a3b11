//! Desk-scale sample-quality metrics: per-condition moment errors, the
//! isotropic-Gaussian W2 distance, and the multi-step vs one-step gap.
//!
//! Quality is always measured against the per-condition oracle marginal,
//! never pooled across conditions.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{ApexError, Result};
use crate::oracle::{gaussian_w2, OracleDist};
use crate::sampler::{euler_sample, VelocityField};

/// Moment errors of a sample set against an oracle condition.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct MomentReport {
    /// `||empirical mean − oracle mean||`.
    pub mean_err: f64,
    /// `|empirical isotropic variance − oracle isotropic variance|`.
    pub var_err: f64,
}

/// Empirical mean and isotropic variance (average per-axis variance) of a
/// sample set.
pub fn empirical_moments(samples: &[Vec<f64>]) -> Result<(Vec<f64>, f64)> {
    if samples.len() < 2 {
        return Err(ApexError::InvalidArgument(
            "need at least 2 samples for moments".into(),
        ));
    }
    let d = samples[0].len();
    let n = samples.len() as f64;
    let mut mean = vec![0.0; d];
    for s in samples {
        for (m, &v) in mean.iter_mut().zip(s) {
            *m += v / n;
        }
    }
    let mut var = 0.0;
    for s in samples {
        for (m, &v) in mean.iter().zip(s) {
            let delta = v - m;
            var += delta * delta;
        }
    }
    Ok((mean, var / (n * d as f64)))
}

/// Compares empirical moments of `samples` against the oracle condition.
pub fn moment_report(
    samples: &[Vec<f64>],
    oracle: &OracleDist,
    cond: usize,
) -> Result<MomentReport> {
    let (mean, var) = empirical_moments(samples)?;
    let want_mean = oracle.condition_mean(cond)?;
    let want_var = oracle.condition_isotropic_var(cond)?;
    let mean_err = mean
        .iter()
        .zip(&want_mean)
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    Ok(MomentReport {
        mean_err,
        var_err: (var - want_var).abs(),
    })
}

/// W2 of the isotropic-Gaussian fit of `samples` against the oracle
/// condition's moments.
pub fn sample_w2(samples: &[Vec<f64>], oracle: &OracleDist, cond: usize) -> Result<f64> {
    let (mean, var) = empirical_moments(samples)?;
    gaussian_w2(
        &mean,
        var,
        &oracle.condition_mean(cond)?,
        oracle.condition_isotropic_var(cond)?,
    )
}

/// One row of the NFE-gap table.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct NfeGapRow {
    pub nfe: usize,
    pub cond: usize,
    pub w2: f64,
    pub mean_err: f64,
    pub var_err: f64,
}

/// For each step count, integrates `n` noise draws through the field and
/// reports the quality of the resulting sample set against the oracle
/// condition. The same noise draws are reused across step counts so the
/// comparison is paired.
pub fn nfe_gap<F: VelocityField>(
    field: &F,
    oracle: &OracleDist,
    cond: usize,
    nfes: &[usize],
    n_samples: usize,
    rng: &mut impl Rng,
) -> Result<Vec<NfeGapRow>> {
    if nfes.is_empty() {
        return Err(ApexError::InvalidArgument("nfe list must be non-empty".into()));
    }
    if n_samples < 2 {
        return Err(ApexError::InvalidArgument(
            "need at least 2 samples per cell".into(),
        ));
    }
    let d = field.dim();
    let zs: Vec<Vec<f64>> = (0..n_samples)
        .map(|_| (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
        .collect();
    let mut rows = Vec::with_capacity(nfes.len());
    for &nfe in nfes {
        let mut samples = Vec::with_capacity(n_samples);
        for z in &zs {
            let (x0, _) = euler_sample(field, z, nfe)?;
            samples.push(x0);
        }
        let report = moment_report(&samples, oracle, cond)?;
        let w2 = sample_w2(&samples, oracle, cond)?;
        rows.push(NfeGapRow {
            nfe,
            cond,
            w2,
            mean_err: report.mean_err,
            var_err: report.var_err,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::OracleField;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn moment_report_rejects_tiny_sets() {
        let oracle = OracleDist::single_gaussians(vec![vec![0.0]], 1.0).unwrap();
        assert!(moment_report(&[vec![1.0]], &oracle, 0).is_err());
    }

    #[test]
    fn degenerate_samples_at_oracle_mean() {
        let oracle = OracleDist::single_gaussians(vec![vec![1.0, 2.0]], 0.5).unwrap();
        let samples = vec![vec![1.0, 2.0]; 10];
        let report = moment_report(&samples, &oracle, 0).unwrap();
        assert!(report.mean_err < 1e-12);
        assert_eq!(report.var_err, 0.25);
    }

    #[test]
    fn oracle_samples_have_small_errors() {
        let oracle = OracleDist::single_gaussians(vec![vec![1.0, 2.0]], 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let samples: Vec<Vec<f64>> = (0..100_000)
            .map(|_| oracle.sample_data(0, &mut rng).unwrap())
            .collect();
        let report = moment_report(&samples, &oracle, 0).unwrap();
        assert!(report.mean_err < 0.01, "mean_err {}", report.mean_err);
        assert!(report.var_err < 0.02, "var_err {}", report.var_err);
    }

    #[test]
    fn moment_report_is_deterministic() {
        let oracle = OracleDist::single_gaussians(vec![vec![0.0, 0.0]], 1.0).unwrap();
        let samples = vec![vec![0.5, -0.5], vec![1.5, 0.25], vec![-1.0, 2.0]];
        let a = moment_report(&samples, &oracle, 0).unwrap();
        let b = moment_report(&samples, &oracle, 0).unwrap();
        assert_eq!(a.mean_err, b.mean_err);
        assert_eq!(a.var_err, b.var_err);
    }

    #[test]
    fn w2_symmetry_and_nonnegativity() {
        let a_mean = [0.3, -0.7];
        let b_mean = [1.0, 0.4];
        let ab = gaussian_w2(&a_mean, 0.8, &b_mean, 1.3).unwrap();
        let ba = gaussian_w2(&b_mean, 1.3, &a_mean, 0.8).unwrap();
        assert!((ab - ba).abs() < 1e-12);
        assert!(ab >= 0.0);
    }

    #[test]
    fn nfe_gap_exact_field_improves_with_steps() {
        let oracle = OracleDist::single_gaussians(vec![vec![0.0, 0.0]], 1.0).unwrap();
        let field = OracleField::new(&oracle, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows = nfe_gap(&field, &oracle, 0, &[1, 50], 5_000, &mut rng).unwrap();
        assert!(rows[1].w2 < rows[0].w2, "{rows:?}");
    }

    #[test]
    fn nfe_gap_delta_data_is_exact_everywhere() {
        let oracle = OracleDist::single_gaussians(vec![vec![1.0, -1.0]], 1e-12).unwrap();
        let field = OracleField::new(&oracle, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let rows = nfe_gap(&field, &oracle, 0, &[1, 2, 5], 100, &mut rng).unwrap();
        for row in rows {
            assert!(row.w2 < 1e-8, "nfe {}: w2 {}", row.nfe, row.w2);
        }
    }

    #[test]
    fn nfe_gap_fixed_seed_is_reproducible() {
        let oracle = OracleDist::single_gaussians(vec![vec![0.5, 0.5]], 0.7).unwrap();
        let field = OracleField::new(&oracle, 0);
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            nfe_gap(&field, &oracle, 0, &[1, 5], 500, &mut rng).unwrap()
        };
        let a = run();
        let b = run();
        for (ra, rb) in a.iter().zip(&b) {
            assert_eq!(ra.w2, rb.w2);
            assert_eq!(ra.mean_err, rb.mean_err);
        }
    }
}
