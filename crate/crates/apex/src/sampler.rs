//! Deterministic generation: multi-step Euler integration of the flow ODE
//! `dx/dt = v(x, t)` from `t = 1` down to `t = 0`, and one-step endpoint
//! sampling `z − F(z, 1, c)`.
//!
//! Integration is generic over a [`VelocityField`], so the exact oracle
//! fields plug in next to trained models; [`CountingField`] instruments
//! any field to assert NFE accounting.

use std::cell::Cell;

use crate::error::{ApexError, Result};
use crate::net::VelocityModel;
use crate::oracle::OracleDist;

/// A velocity field `v(x, t)` that the sampler can integrate.
pub trait VelocityField {
    fn velocity(&self, x: &[f64], t: f64) -> Result<Vec<f64>>;
    fn dim(&self) -> usize;
}

/// A trained model under a fixed condition vector.
pub struct ModelField<'a> {
    model: &'a VelocityModel,
    cond_vec: Vec<f64>,
}

impl<'a> ModelField<'a> {
    /// Field under the embedding of a condition index.
    pub fn new(model: &'a VelocityModel, cond: usize) -> Result<Self> {
        Ok(Self {
            model,
            cond_vec: model.embedding(cond)?,
        })
    }

    /// Field under an explicit condition vector (a shifted embedding, say).
    pub fn with_condition(model: &'a VelocityModel, cond_vec: Vec<f64>) -> Self {
        Self { model, cond_vec }
    }
}

impl VelocityField for ModelField<'_> {
    fn velocity(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        self.model.forward(x, t, &self.cond_vec)
    }

    fn dim(&self) -> usize {
        self.model.spec().data_dim
    }
}

/// The exact conditional-mean velocity field of an oracle condition.
pub struct OracleField<'a> {
    oracle: &'a OracleDist,
    cond: usize,
}

impl<'a> OracleField<'a> {
    pub fn new(oracle: &'a OracleDist, cond: usize) -> Self {
        Self { oracle, cond }
    }
}

impl VelocityField for OracleField<'_> {
    fn velocity(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        // The conditional mean is singular at the endpoints; the Euler grid
        // only queries t in (0, 1].
        let t = t.min(1.0 - 1e-12).max(1e-12);
        self.oracle.optimal_velocity(self.cond, x, t)
    }

    fn dim(&self) -> usize {
        self.oracle.dim()
    }
}

/// Wraps a field and counts evaluations.
pub struct CountingField<'a, F: VelocityField> {
    inner: &'a F,
    calls: Cell<usize>,
}

impl<'a, F: VelocityField> CountingField<'a, F> {
    pub fn new(inner: &'a F) -> Self {
        Self {
            inner,
            calls: Cell::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.get()
    }
}

impl<F: VelocityField> VelocityField for CountingField<'_, F> {
    fn velocity(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        self.calls.set(self.calls.get() + 1);
        self.inner.velocity(x, t)
    }

    fn dim(&self) -> usize {
        self.inner.dim()
    }
}

/// Recorded integration states from noise to sample.
#[derive(Debug, Clone)]
pub struct Trajectory {
    /// `(t, x_t)` states with strictly decreasing `t`, from `(1, z)` down
    /// to `(0, x_0)`.
    pub states: Vec<(f64, Vec<f64>)>,
    /// Number of field evaluations spent.
    pub nfe: usize,
}

/// Integrates the flow from `z` at `t = 1` to `t = 0` with `n_steps`
/// uniform Euler steps `x ← x − (1/n)·v(x, t_k)`, `t_k = 1 − k/n`.
pub fn euler_sample<F: VelocityField>(
    field: &F,
    z: &[f64],
    n_steps: usize,
) -> Result<(Vec<f64>, Trajectory)> {
    if n_steps == 0 {
        return Err(ApexError::InvalidArgument("n_steps must be >= 1".into()));
    }
    let h = 1.0 / n_steps as f64;
    let mut x = z.to_vec();
    let mut states = Vec::with_capacity(n_steps + 1);
    states.push((1.0, x.clone()));
    for k in 0..n_steps {
        let t_k = 1.0 - k as f64 * h;
        let v = field.velocity(&x, t_k)?;
        for (xi, vi) in x.iter_mut().zip(&v) {
            *xi -= h * vi;
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(ApexError::Numeric(format!(
                "state became non-finite at step {k} (t = {t_k})"
            )));
        }
        let t_next = if k + 1 == n_steps {
            0.0
        } else {
            1.0 - (k + 1) as f64 * h
        };
        states.push((t_next, x.clone()));
    }
    Ok((
        x,
        Trajectory {
            states,
            nfe: n_steps,
        },
    ))
}

/// One-step endpoint sample `z − v(z, 1)`; a single field evaluation.
pub fn one_step_sample<F: VelocityField>(field: &F, z: &[f64]) -> Result<Vec<f64>> {
    let v = field.velocity(z, 1.0)?;
    let out: Vec<f64> = z.iter().zip(&v).map(|(&zi, &vi)| zi - vi).collect();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(ApexError::Numeric("one-step sample is non-finite".into()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{Activation, NetSpec};
    use crate::oracle::gaussian_w2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    struct ZeroField(usize);
    impl VelocityField for ZeroField {
        fn velocity(&self, x: &[f64], _t: f64) -> Result<Vec<f64>> {
            Ok(vec![0.0; x.len()])
        }
        fn dim(&self) -> usize {
            self.0
        }
    }

    struct NanField;
    impl VelocityField for NanField {
        fn velocity(&self, _x: &[f64], t: f64) -> Result<Vec<f64>> {
            Ok(vec![if t < 0.7 { f64::NAN } else { 0.0 }])
        }
        fn dim(&self) -> usize {
            1
        }
    }

    #[test]
    fn zero_field_returns_noise() {
        let field = ZeroField(2);
        let z = [0.4, -1.1];
        for n in [1, 3, 10] {
            let (x0, traj) = euler_sample(&field, &z, n).unwrap();
            assert_eq!(x0, z.to_vec());
            assert_eq!(traj.nfe, n);
        }
    }

    #[test]
    fn trajectory_invariants() {
        let field = ZeroField(1);
        let (_, traj) = euler_sample(&field, &[2.0], 5).unwrap();
        assert_eq!(traj.states[0], (1.0, vec![2.0]));
        assert_eq!(traj.states.last().unwrap().0, 0.0);
        for w in traj.states.windows(2) {
            assert!(w[1].0 < w[0].0, "times must strictly decrease");
        }
    }

    // With point-mass data the exact field is (x - mu)/t, and a single
    // Euler step from z lands on mu exactly.
    #[test]
    fn delta_data_one_step_is_exact() {
        let oracle = OracleDist::single_gaussians(vec![vec![1.5, -2.5]], 1e-12).unwrap();
        let field = OracleField::new(&oracle, 0);
        let z = [0.3, 0.8];
        let (x0, _) = euler_sample(&field, &z, 1).unwrap();
        assert!((x0[0] - 1.5).abs() < 1e-9 && (x0[1] + 2.5).abs() < 1e-9);
        let one = one_step_sample(&field, &z).unwrap();
        assert_eq!(one, x0);
    }

    #[test]
    fn one_step_equals_single_euler_step_bitwise() {
        let spec = NetSpec {
            data_dim: 2,
            hidden: vec![8],
            activation: Activation::Tanh,
            time_freqs: 2,
            cond_count: 2,
            embed_dim: 3,
            learn_embeddings: false,
        };
        let model = VelocityModel::new_seeded(spec, 3).unwrap();
        let field = ModelField::new(&model, 1).unwrap();
        let z = [0.25, -0.75];
        let (euler, _) = euler_sample(&field, &z, 1).unwrap();
        let one = one_step_sample(&field, &z).unwrap();
        assert_eq!(euler, one);
    }

    #[test]
    fn nfe_matches_instrumented_counter() {
        let inner = ZeroField(1);
        let counting = CountingField::new(&inner);
        let (_, traj) = euler_sample(&counting, &[1.0], 7).unwrap();
        assert_eq!(traj.nfe, 7);
        assert_eq!(counting.calls(), 7);
        let _ = one_step_sample(&counting, &[1.0]).unwrap();
        assert_eq!(counting.calls(), 8);
    }

    #[test]
    fn non_finite_state_reports_step_index() {
        let err = euler_sample(&NanField, &[1.0], 4).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("step"), "{msg}");
    }

    // With the exact field on standard-normal data, the W2 error of the
    // empirical sample distribution shrinks as the step count grows.
    #[test]
    fn w2_decreases_with_steps_for_exact_field() {
        let oracle = OracleDist::single_gaussians(vec![vec![0.0, 0.0]], 1.0).unwrap();
        let field = OracleField::new(&oracle, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 10_000;
        let zs: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..2).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        let mut prev = f64::INFINITY;
        for steps in [1usize, 2, 5, 20, 50] {
            let mut mean = vec![0.0; 2];
            let mut second = 0.0;
            for z in &zs {
                let (x0, _) = euler_sample(&field, z, steps).unwrap();
                for i in 0..2 {
                    mean[i] += x0[i] / n as f64;
                    second += x0[i] * x0[i] / (2.0 * n as f64);
                }
            }
            let var = second - (mean[0] * mean[0] + mean[1] * mean[1]) / 2.0;
            let w2 = gaussian_w2(&mean, var.max(0.0), &[0.0, 0.0], 1.0).unwrap();
            assert!(
                w2 <= prev + 1e-3,
                "W2 grew from {prev} to {w2} at {steps} steps"
            );
            prev = w2;
        }
        assert!(prev < 0.01, "final W2 {prev} too large");
    }

    // Moment consistency at a fine grid: n=200 steps transports the prior
    // to the data distribution within Monte-Carlo tolerance.
    #[test]
    fn fine_grid_moments_match_data() {
        let oracle = OracleDist::single_gaussians(vec![vec![2.0, -1.0]], 0.5).unwrap();
        let field = OracleField::new(&oracle, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let n = 20_000;
        let mut mean = vec![0.0; 2];
        let mut second = vec![0.0; 2];
        for _ in 0..n {
            let z: Vec<f64> = (0..2).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let (x0, _) = euler_sample(&field, &z, 200).unwrap();
            for i in 0..2 {
                mean[i] += x0[i] / n as f64;
                second[i] += x0[i] * x0[i] / n as f64;
            }
        }
        let se_mean = 0.5 / (n as f64).sqrt();
        for (i, want) in [2.0, -1.0].iter().enumerate() {
            assert!(
                (mean[i] - want).abs() < 3.0 * se_mean + 0.01,
                "axis {i}: mean {} vs {want}",
                mean[i]
            );
            let var = second[i] - mean[i] * mean[i];
            assert!((var - 0.25).abs() < 0.02, "axis {i}: var {var}");
        }
    }
}
