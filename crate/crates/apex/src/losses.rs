//! Training objectives and their gradients.
//!
//! Two branches of the same network appear everywhere: the real branch
//! `F(x_t, t, c)` and the shifted branch evaluated under `c_fake = a·c + b`.
//! The shifted branch plays two roles with different gradient status:
//!
//! - in [`l_fake`] it is trained on fake-sample trajectories, and the
//!   gradient also flows through the implied clean sample
//!   `x_fake = x_t − t·F(x_t, t, c)` into the real branch;
//! - in [`l_cons`] / [`l_mix`] it is queried at the *real* trajectory point
//!   `(x_t, t)` as a stop-gradient correction reference `v_fake`.
//!
//! The endpoint-space objectives carry the weight `1/ω(t)`; they are
//! evaluated in the algebraically equal `t(1−t)`-weighted velocity form
//! for stability, except [`l_mix`], whose residual is built in endpoint
//! space so that its gradient route stays independent of [`g_apex`] — the
//! equality of the two gradients is a certified result, not a shared code
//! path.
//!
//! Loss evaluation is pure given `(params, batch)`. Batches are processed
//! in fixed-size chunks (parallel across chunks, sequential combine in
//! chunk order), so results are bitwise reproducible at any thread count.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_same_dim, ApexError, Result};
use crate::net::{shift_condition, ShiftSpec, VelocityModel};
use crate::oracle::OracleDist;
use crate::path::{interpolate, velocity_to_score, PathPoint};

/// Fixed batch chunk size; the reduction order (and therefore every f64
/// rounding) depends only on the batch, never on the thread count.
const CHUNK: usize = 16;

/// Inner and outer loss weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Inner mix between data supervision and the fake correction, in `[0, 1]`.
    pub lambda: f64,
    /// Outer weight of the fake flow fitting term.
    pub lambda_p: f64,
    /// Outer weight of the mixed consistency term.
    pub lambda_e: f64,
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(ApexError::InvalidArgument(format!(
                "lambda must lie in [0, 1], got {}",
                self.lambda
            )));
        }
        if self.lambda_p < 0.0 || self.lambda_e < 0.0 {
            return Err(ApexError::InvalidArgument(format!(
                "outer weights must be non-negative, got lambda_p={}, lambda_e={}",
                self.lambda_p, self.lambda_e
            )));
        }
        Ok(())
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda: 0.5,
            lambda_p: 1.0,
            lambda_e: 1.0,
        }
    }
}

/// One training tuple: a path point, its condition, and the pre-drawn
/// randomness of its fake trajectory.
#[derive(Debug, Clone)]
pub struct Sample {
    pub path: PathPoint,
    pub cond: usize,
    /// Noise `z'` for the fake trajectory.
    pub z_fake: Vec<f64>,
    /// Time `t'` for the fake trajectory.
    pub t_fake: f64,
}

/// A batch of training tuples.
#[derive(Debug, Clone)]
pub struct Batch {
    pub samples: Vec<Sample>,
}

impl Batch {
    /// Draws a batch: conditions uniform over `K`, pairs from the oracle,
    /// `t ~ U[t_min, t_max]`, and fresh `(z', t')` for the fake trajectory
    /// unless `fake_reuse_noise` reuses the originals.
    pub fn draw<R: Rng + ?Sized>(
        oracle: &OracleDist,
        size: usize,
        t_min: f64,
        t_max: f64,
        fake_reuse_noise: bool,
        rng: &mut R,
    ) -> Result<Batch> {
        if size == 0 {
            return Err(ApexError::InvalidArgument("batch size must be >= 1".into()));
        }
        if !(0.0 < t_min && t_min < t_max && t_max < 1.0) {
            return Err(ApexError::InvalidArgument(format!(
                "need 0 < t_min < t_max < 1, got [{t_min}, {t_max}]"
            )));
        }
        let mut samples = Vec::with_capacity(size);
        for _ in 0..size {
            let cond = rng.gen_range(0..oracle.num_conditions());
            let (x, z) = oracle.sample_pair(cond, rng)?;
            let t = t_min + (t_max - t_min) * rng.gen::<f64>();
            let path = interpolate(&x, &z, t)?;
            let (z_fake, t_fake) = if fake_reuse_noise {
                (path.z.clone(), t)
            } else {
                let zf = (0..oracle.dim())
                    .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
                    .collect();
                let tf = t_min + (t_max - t_min) * rng.gen::<f64>();
                (zf, tf)
            };
            samples.push(Sample {
                path,
                cond,
                z_fake,
                t_fake,
            });
        }
        Ok(Batch { samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Fake trajectory ingredients for one sample.
#[derive(Debug, Clone)]
pub struct FakeBranch {
    /// Implied clean sample `x_t − t·F(x_t, t, c)`; gradient-carrying in
    /// the losses that consume it.
    pub x_fake: Vec<f64>,
    /// Noise used for the fake trajectory.
    pub z_fake: Vec<f64>,
    /// Time of the fake trajectory point.
    pub t_fake: f64,
    /// Fake trajectory point `t'·z' + (1−t')·x_fake`.
    pub x_t_fake: Vec<f64>,
    /// Stop-gradient reference `F(x_t, t, c_fake)` at the real point.
    pub v_fake: Vec<f64>,
}

/// Builds the fake trajectory for one path point.
pub fn make_fake(
    model: &VelocityModel,
    path: &PathPoint,
    c: &[f64],
    c_fake: &[f64],
    z_fake: &[f64],
    t_fake: f64,
) -> Result<FakeBranch> {
    if path.t <= 0.0 || path.t > 1.0 {
        return Err(ApexError::InvalidArgument(format!(
            "fake construction needs t in (0, 1], got {}",
            path.t
        )));
    }
    ensure_same_dim("make_fake z_fake", path.x_t.len(), z_fake.len())?;
    let f = model.forward(&path.x_t, path.t, c)?;
    let x_fake: Vec<f64> = path
        .x_t
        .iter()
        .zip(&f)
        .map(|(&s, &fi)| s - path.t * fi)
        .collect();
    let x_t_fake: Vec<f64> = x_fake
        .iter()
        .zip(z_fake)
        .map(|(&xf, &zf)| t_fake * zf + (1.0 - t_fake) * xf)
        .collect();
    let v_fake = model.forward(&path.x_t, path.t, c_fake)?;
    Ok(FakeBranch {
        x_fake,
        z_fake: z_fake.to_vec(),
        t_fake,
        x_t_fake,
        v_fake,
    })
}

/// Mixed endpoint target `(1−λ)·x + λ·(x_t − t·v_fake)`. Both ingredients
/// are data or stop-gradient, so the target carries no gradient.
pub fn t_mix(x: &[f64], v_fake: &[f64], x_t: &[f64], t: f64, lambda: f64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(ApexError::InvalidArgument(format!(
            "lambda must lie in [0, 1], got {lambda}"
        )));
    }
    ensure_same_dim("t_mix x", x_t.len(), x.len())?;
    ensure_same_dim("t_mix v_fake", x_t.len(), v_fake.len())?;
    Ok((0..x.len())
        .map(|i| (1.0 - lambda) * x[i] + lambda * (x_t[i] - t * v_fake[i]))
        .collect())
}

/// Velocity gap `F(x_t, t, c_fake) − F(x_t, t, c)` between the branches;
/// diagnostic only.
pub fn delta_v(
    model: &VelocityModel,
    x_t: &[f64],
    t: f64,
    c: &[f64],
    c_fake: &[f64],
) -> Result<Vec<f64>> {
    let v_theta = model.forward(x_t, t, c)?;
    let v_fake = model.forward(x_t, t, c_fake)?;
    Ok(v_fake
        .iter()
        .zip(&v_theta)
        .map(|(&a, &b)| a - b)
        .collect())
}

/// The induced and exact scores entering the mixed-score analysis.
#[derive(Debug, Clone)]
pub struct ScoreSet {
    /// Score induced by the real branch velocity.
    pub s_theta: Vec<f64>,
    /// Score induced by the shifted branch velocity.
    pub s_fake: Vec<f64>,
    /// Exact marginal data score from the oracle.
    pub s_data: Vec<f64>,
    /// `(1−λ)·s_data + λ·s_fake`.
    pub s_mix: Vec<f64>,
}

/// Maps both branch velocities through the score bridge and interpolates
/// against the oracle's exact data score.
pub fn induced_scores(
    model: &VelocityModel,
    oracle: &OracleDist,
    cond: usize,
    x_t: &[f64],
    t: f64,
    shift: ShiftSpec,
    lambda: f64,
) -> Result<ScoreSet> {
    if t <= 0.0 || t >= 1.0 {
        return Err(ApexError::SingularTime {
            op: "induced_scores",
            t,
            domain: "(0, 1)",
        });
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(ApexError::InvalidArgument(format!(
            "lambda must lie in [0, 1], got {lambda}"
        )));
    }
    let c = model.embedding(cond)?;
    let c_fake = shift_condition(&c, shift)?;
    let v_theta = model.forward(x_t, t, &c)?;
    let v_fake = model.forward(x_t, t, &c_fake)?;
    let s_theta = velocity_to_score(&v_theta, x_t, t)?;
    let s_fake = velocity_to_score(&v_fake, x_t, t)?;
    let s_data = oracle.marginal_score(cond, x_t, t)?;
    let s_mix = (0..x_t.len())
        .map(|i| (1.0 - lambda) * s_data[i] + lambda * s_fake[i])
        .collect();
    Ok(ScoreSet {
        s_theta,
        s_fake,
        s_data,
        s_mix,
    })
}

/// Per-term values of one objective evaluation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LossReport {
    pub l_fm: f64,
    pub l_fake: f64,
    pub l_sup: f64,
    pub l_cons: f64,
    pub l_mix: f64,
    pub g_apex: f64,
    pub l_apex: f64,
    /// Mean norm of the branch velocity gap at the real points.
    pub delta_v_norm: f64,
    pub weights: LossWeights,
    pub batch_size: usize,
    pub t_mean: f64,
    pub t_lo: f64,
    pub t_hi: f64,
}

fn nonempty(batch: &Batch) -> Result<()> {
    if batch.is_empty() {
        return Err(ApexError::InvalidArgument("batch must be non-empty".into()));
    }
    for s in &batch.samples {
        if s.path.t <= 0.0 || s.path.t >= 1.0 {
            return Err(ApexError::InvalidArgument(format!(
                "sample time {} outside (0, 1)",
                s.path.t
            )));
        }
    }
    Ok(())
}

fn branch_conditions(
    model: &VelocityModel,
    cond: usize,
    shift: ShiftSpec,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let c = model.embedding(cond)?;
    let c_fake = shift_condition(&c, shift)?;
    Ok((c, c_fake))
}

fn sq_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

/// Folds per-sample contributions over the batch: `V` scalar accumulators
/// plus an optional flat gradient. Chunks of [`CHUNK`] samples are mapped
/// in parallel and combined sequentially in chunk order.
fn fold_batch<const V: usize, F>(
    samples: &[Sample],
    n_params: usize,
    per_sample: F,
) -> Result<([f64; V], Vec<f64>)>
where
    F: Fn(&Sample, &mut [f64; V], &mut [f64]) -> Result<()> + Sync,
{
    let chunks: Vec<Result<([f64; V], Vec<f64>)>> = samples
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut values = [0.0; V];
            let mut grads = vec![0.0; n_params];
            for s in chunk {
                per_sample(s, &mut values, &mut grads)?;
            }
            Ok((values, grads))
        })
        .collect();
    let mut values = [0.0; V];
    let mut grads = vec![0.0; n_params];
    for part in chunks {
        let (v, g) = part?;
        for i in 0..V {
            values[i] += v[i];
        }
        for (acc, gi) in grads.iter_mut().zip(&g) {
            *acc += gi;
        }
    }
    Ok((values, grads))
}

/// Standard flow-matching loss: mean of `||F(x_t, t, c) − (z − x)||²`.
pub fn l_fm(model: &VelocityModel, batch: &Batch) -> Result<f64> {
    nonempty(batch)?;
    let (v, _) = fold_batch::<1, _>(&batch.samples, 0, |s, acc, _| {
        let c = model.embedding(s.cond)?;
        let f = model.forward(&s.path.x_t, s.path.t, &c)?;
        let r: f64 = f
            .iter()
            .zip(&s.path.v_data)
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum();
        acc[0] += r;
        Ok(())
    })?;
    Ok(v[0] / batch.len() as f64)
}

/// Flow-matching loss with its gradient.
pub fn l_fm_grad(model: &VelocityModel, batch: &Batch) -> Result<(f64, Vec<f64>)> {
    nonempty(batch)?;
    let inv_b = 1.0 / batch.len() as f64;
    let (v, g) = fold_batch::<1, _>(&batch.samples, model.num_params(), |s, acc, grads| {
        let c = model.embedding(s.cond)?;
        let (f, trace) = model.forward_traced(&s.path.x_t, s.path.t, &c)?;
        let resid: Vec<f64> = f.iter().zip(&s.path.v_data).map(|(&a, &b)| a - b).collect();
        acc[0] += sq_norm(&resid) * inv_b;
        let cot: Vec<f64> = resid.iter().map(|r| 2.0 * inv_b * r).collect();
        model.vjp(&trace, &cot, grads, Some((s.cond, 1.0)), false)?;
        Ok(())
    })?;
    Ok((v[0], g))
}

/// Supervised endpoint loss, evaluated in the stable velocity form
/// `t(1−t)·||F − v_data||²` (equal to `(1/ω)·||endpoint − x||²`).
pub fn l_sup(model: &VelocityModel, batch: &Batch) -> Result<f64> {
    nonempty(batch)?;
    let (v, _) = fold_batch::<1, _>(&batch.samples, 0, |s, acc, _| {
        let c = model.embedding(s.cond)?;
        let f = model.forward(&s.path.x_t, s.path.t, &c)?;
        let w = s.path.t * (1.0 - s.path.t);
        let r: f64 = f
            .iter()
            .zip(&s.path.v_data)
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum();
        acc[0] += w * r;
        Ok(())
    })?;
    Ok(v[0] / batch.len() as f64)
}

pub fn l_sup_grad(model: &VelocityModel, batch: &Batch) -> Result<(f64, Vec<f64>)> {
    nonempty(batch)?;
    let inv_b = 1.0 / batch.len() as f64;
    let (v, g) = fold_batch::<1, _>(&batch.samples, model.num_params(), |s, acc, grads| {
        let c = model.embedding(s.cond)?;
        let (f, trace) = model.forward_traced(&s.path.x_t, s.path.t, &c)?;
        let w = s.path.t * (1.0 - s.path.t);
        let resid: Vec<f64> = f.iter().zip(&s.path.v_data).map(|(&a, &b)| a - b).collect();
        acc[0] += w * sq_norm(&resid) * inv_b;
        let cot: Vec<f64> = resid.iter().map(|r| 2.0 * inv_b * w * r).collect();
        model.vjp(&trace, &cot, grads, Some((s.cond, 1.0)), false)?;
        Ok(())
    })?;
    Ok((v[0], g))
}

/// Consistency loss against the stop-gradient shifted branch, queried at
/// the same real point: `t(1−t)·||F − v_fake||²`.
pub fn l_cons(model: &VelocityModel, batch: &Batch, shift: ShiftSpec) -> Result<f64> {
    nonempty(batch)?;
    let (v, _) = fold_batch::<1, _>(&batch.samples, 0, |s, acc, _| {
        let (c, c_fake) = branch_conditions(model, s.cond, shift)?;
        let f = model.forward(&s.path.x_t, s.path.t, &c)?;
        let v_fake = model.forward(&s.path.x_t, s.path.t, &c_fake)?;
        let w = s.path.t * (1.0 - s.path.t);
        let r: f64 = f
            .iter()
            .zip(&v_fake)
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum();
        acc[0] += w * r;
        Ok(())
    })?;
    Ok(v[0] / batch.len() as f64)
}

pub fn l_cons_grad(
    model: &VelocityModel,
    batch: &Batch,
    shift: ShiftSpec,
) -> Result<(f64, Vec<f64>)> {
    nonempty(batch)?;
    let inv_b = 1.0 / batch.len() as f64;
    let (v, g) = fold_batch::<1, _>(&batch.samples, model.num_params(), |s, acc, grads| {
        let (c, c_fake) = branch_conditions(model, s.cond, shift)?;
        let (f, trace) = model.forward_traced(&s.path.x_t, s.path.t, &c)?;
        let v_fake = model.forward(&s.path.x_t, s.path.t, &c_fake)?;
        let w = s.path.t * (1.0 - s.path.t);
        let resid: Vec<f64> = f.iter().zip(&v_fake).map(|(&a, &b)| a - b).collect();
        acc[0] += w * sq_norm(&resid) * inv_b;
        let cot: Vec<f64> = resid.iter().map(|r| 2.0 * inv_b * w * r).collect();
        model.vjp(&trace, &cot, grads, Some((s.cond, 1.0)), false)?;
        Ok(())
    })?;
    Ok((v[0], g))
}

/// Convex combination `(1−λ)·l_sup + λ·l_cons` over the same batch and the
/// same shifted-branch evaluations.
pub fn g_apex(model: &VelocityModel, batch: &Batch, shift: ShiftSpec, lambda: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(ApexError::InvalidArgument(format!(
            "lambda must lie in [0, 1], got {lambda}"
        )));
    }
    Ok((1.0 - lambda) * l_sup(model, batch)? + lambda * l_cons(model, batch, shift)?)
}

/// Gradient route of [`g_apex`]: velocity-space residuals.
pub fn g_apex_grad(
    model: &VelocityModel,
    batch: &Batch,
    shift: ShiftSpec,
    lambda: f64,
) -> Result<(f64, Vec<f64>)> {
    nonempty(batch)?;
    if !(0.0..=1.0).contains(&lambda) {
        return Err(ApexError::InvalidArgument(format!(
            "lambda must lie in [0, 1], got {lambda}"
        )));
    }
    let inv_b = 1.0 / batch.len() as f64;
    let (v, g) = fold_batch::<1, _>(&batch.samples, model.num_params(), |s, acc, grads| {
        let (c, c_fake) = branch_conditions(model, s.cond, shift)?;
        let (f, trace) = model.forward_traced(&s.path.x_t, s.path.t, &c)?;
        let v_fake = model.forward(&s.path.x_t, s.path.t, &c_fake)?;
        let w = s.path.t * (1.0 - s.path.t);
        let mut value = 0.0;
        let mut cot = vec![0.0; f.len()];
        for i in 0..f.len() {
            let r_sup = f[i] - s.path.v_data[i];
            let r_cons = f[i] - v_fake[i];
            value += w * ((1.0 - lambda) * r_sup * r_sup + lambda * r_cons * r_cons);
            cot[i] = 2.0 * inv_b * w * ((1.0 - lambda) * r_sup + lambda * r_cons);
        }
        acc[0] += value * inv_b;
        model.vjp(&trace, &cot, grads, Some((s.cond, 1.0)), false)?;
        Ok(())
    })?;
    Ok((v[0], g))
}

/// Mixed consistency loss `(1/ω)·||endpoint(F) − T_mix||²`, with the
/// residual built in endpoint space.
pub fn l_mix(model: &VelocityModel, batch: &Batch, shift: ShiftSpec, lambda: f64) -> Result<f64> {
    Ok(l_mix_grad_impl(model, batch, shift, lambda, None, false)?.0)
}

/// Mixed consistency loss and its gradient through the endpoint residual.
pub fn l_mix_grad(
    model: &VelocityModel,
    batch: &Batch,
    shift: ShiftSpec,
    lambda: f64,
) -> Result<(f64, Vec<f64>)> {
    l_mix_grad_impl(model, batch, shift, lambda, None, true)
}

/// [`l_mix`] with the stop-gradient reference literally replaced by frozen
/// constants; used to certify that the reference carries no gradient.
pub fn l_mix_frozen(
    model: &VelocityModel,
    batch: &Batch,
    lambda: f64,
    frozen_v_fake: &[Vec<f64>],
) -> Result<f64> {
    Ok(l_mix_grad_impl(model, batch, ShiftSpec::identity(), lambda, Some(frozen_v_fake), false)?.0)
}

/// Gradient of [`l_mix_frozen`]; bitwise identical to [`l_mix_grad`] when
/// the frozen values equal the live shifted-branch outputs.
pub fn l_mix_frozen_grad(
    model: &VelocityModel,
    batch: &Batch,
    lambda: f64,
    frozen_v_fake: &[Vec<f64>],
) -> Result<(f64, Vec<f64>)> {
    l_mix_grad_impl(
        model,
        batch,
        ShiftSpec::identity(),
        lambda,
        Some(frozen_v_fake),
        true,
    )
}

fn l_mix_grad_impl(
    model: &VelocityModel,
    batch: &Batch,
    shift: ShiftSpec,
    lambda: f64,
    frozen_v_fake: Option<&[Vec<f64>]>,
    want_grad: bool,
) -> Result<(f64, Vec<f64>)> {
    nonempty(batch)?;
    if !(0.0..=1.0).contains(&lambda) {
        return Err(ApexError::InvalidArgument(format!(
            "lambda must lie in [0, 1], got {lambda}"
        )));
    }
    if let Some(frozen) = frozen_v_fake {
        ensure_same_dim("l_mix frozen references", batch.len(), frozen.len())?;
    }
    let inv_b = 1.0 / batch.len() as f64;
    let n_params = if want_grad { model.num_params() } else { 0 };
    let samples: Vec<(usize, &Sample)> = batch.samples.iter().enumerate().collect();
    let chunks: Vec<Result<(f64, Vec<f64>)>> = samples
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut value = 0.0;
            let mut grads = vec![0.0; n_params];
            for (idx, s) in chunk {
                let t = s.path.t;
                let c = model.embedding(s.cond)?;
                let v_fake = match frozen_v_fake {
                    Some(frozen) => frozen[*idx].clone(),
                    None => {
                        let c_fake = shift_condition(&c, shift)?;
                        model.forward(&s.path.x_t, t, &c_fake)?
                    }
                };
                let (f, trace) = model.forward_traced(&s.path.x_t, t, &c)?;
                let target = t_mix(&s.path.x, &v_fake, &s.path.x_t, t, lambda)?;
                // endpoint residual: (x_t − t·F) − T_mix
                let resid: Vec<f64> = (0..f.len())
                    .map(|i| s.path.x_t[i] - t * f[i] - target[i])
                    .collect();
                value += ((1.0 - t) / t) * sq_norm(&resid) * inv_b;
                if want_grad {
                    let cot: Vec<f64> = resid.iter().map(|r| -2.0 * inv_b * (1.0 - t) * r).collect();
                    model.vjp(&trace, &cot, &mut grads, Some((s.cond, 1.0)), false)?;
                }
            }
            Ok((value, grads))
        })
        .collect();
    let mut value = 0.0;
    let mut grads = vec![0.0; n_params];
    for part in chunks {
        let (v, g) = part?;
        value += v;
        for (acc, gi) in grads.iter_mut().zip(&g) {
            *acc += gi;
        }
    }
    Ok((value, grads))
}

/// Fake flow fitting loss: mean of
/// `||F(x_t_fake, t', c_fake) − (z' − x_fake)||²`. No stop-gradient: the
/// gradient flows through the shifted-branch evaluation *and* through
/// `x_fake` into the real branch.
pub fn l_fake(model: &VelocityModel, batch: &Batch, shift: ShiftSpec) -> Result<f64> {
    nonempty(batch)?;
    let (v, _) = fold_batch::<1, _>(&batch.samples, 0, |s, acc, _| {
        let (c, c_fake) = branch_conditions(model, s.cond, shift)?;
        let fake = make_fake(model, &s.path, &c, &c_fake, &s.z_fake, s.t_fake)?;
        let f2 = model.forward(&fake.x_t_fake, fake.t_fake, &c_fake)?;
        let r: f64 = (0..f2.len())
            .map(|i| {
                let d = f2[i] - (s.z_fake[i] - fake.x_fake[i]);
                d * d
            })
            .sum();
        acc[0] += r;
        Ok(())
    })?;
    Ok(v[0] / batch.len() as f64)
}

pub fn l_fake_grad(
    model: &VelocityModel,
    batch: &Batch,
    shift: ShiftSpec,
) -> Result<(f64, Vec<f64>)> {
    nonempty(batch)?;
    let inv_b = 1.0 / batch.len() as f64;
    let (v, g) = fold_batch::<1, _>(&batch.samples, model.num_params(), |s, acc, grads| {
        let (value, _) = fake_term(model, s, shift, 2.0 * inv_b, grads)?;
        acc[0] += value * inv_b;
        Ok(())
    })?;
    Ok((v[0], g))
}

/// Per-sample fake flow term. Accumulates the gradient scaled by
/// `cot_scale` (`2·λ_p/B` for the combined objective) and returns the raw
/// squared residual plus the pieces the combined objective reuses.
fn fake_term(
    model: &VelocityModel,
    s: &Sample,
    shift: ShiftSpec,
    cot_scale: f64,
    grads: &mut [f64],
) -> Result<(f64, Vec<f64>)> {
    let t = s.path.t;
    let (c, c_fake) = branch_conditions(model, s.cond, shift)?;
    let (f1, trace1) = model.forward_traced(&s.path.x_t, t, &c)?;
    let x_fake: Vec<f64> = s
        .path
        .x_t
        .iter()
        .zip(&f1)
        .map(|(&xt, &fi)| xt - t * fi)
        .collect();
    let tf = s.t_fake;
    let x_t_fake: Vec<f64> = x_fake
        .iter()
        .zip(&s.z_fake)
        .map(|(&xf, &zf)| tf * zf + (1.0 - tf) * xf)
        .collect();
    let (f2, trace2) = model.forward_traced(&x_t_fake, tf, &c_fake)?;
    let resid: Vec<f64> = (0..f2.len())
        .map(|i| f2[i] - (s.z_fake[i] - x_fake[i]))
        .collect();
    let value = sq_norm(&resid);

    if cot_scale != 0.0 {
        // Path 1: the shifted-branch evaluation itself.
        let cot2: Vec<f64> = resid.iter().map(|r| cot_scale * r).collect();
        let gx = model
            .vjp(&trace2, &cot2, grads, Some((s.cond, shift.a)), true)?
            .expect("input gradient requested");
        // Paths 2 and 3: through x_t_fake and through the target, both via
        // ∂x_fake/∂θ = −t·∂F(x_t, t, c)/∂θ.
        let cot1: Vec<f64> = (0..gx.len())
            .map(|i| -t * ((1.0 - tf) * gx[i] + cot_scale * resid[i]))
            .collect();
        model.vjp(&trace1, &cot1, grads, Some((s.cond, 1.0)), false)?;
    }
    Ok((value, f1))
}

/// Full objective `λ_p·l_fake + λ_e·l_mix` with every sub-term recorded.
pub fn l_apex(
    model: &VelocityModel,
    batch: &Batch,
    shift: ShiftSpec,
    weights: LossWeights,
) -> Result<LossReport> {
    Ok(l_apex_grad(model, batch, shift, weights)?.0)
}

/// Full objective with its gradient. One traced real-branch evaluation and
/// one traced fake-trajectory evaluation per sample feed every term.
pub fn l_apex_grad(
    model: &VelocityModel,
    batch: &Batch,
    shift: ShiftSpec,
    weights: LossWeights,
) -> Result<(LossReport, Vec<f64>)> {
    nonempty(batch)?;
    weights.validate()?;
    let inv_b = 1.0 / batch.len() as f64;
    let lambda = weights.lambda;
    // accumulators: l_fm, l_fake, l_sup, l_cons, l_mix, delta_v_norm, t_sum
    let (acc, grads) = fold_batch::<7, _>(&batch.samples, model.num_params(), |s, acc, grads| {
        let t = s.path.t;
        let (c, c_fake) = branch_conditions(model, s.cond, shift)?;
        let (f1, trace1) = model.forward_traced(&s.path.x_t, t, &c)?;
        let v_fake = model.forward(&s.path.x_t, t, &c_fake)?;

        // fake trajectory term (gradient scaled by λ_p)
        let x_fake: Vec<f64> = s
            .path
            .x_t
            .iter()
            .zip(&f1)
            .map(|(&xt, &fi)| xt - t * fi)
            .collect();
        let tf = s.t_fake;
        let x_t_fake: Vec<f64> = x_fake
            .iter()
            .zip(&s.z_fake)
            .map(|(&xf, &zf)| tf * zf + (1.0 - tf) * xf)
            .collect();
        let (f2, trace2) = model.forward_traced(&x_t_fake, tf, &c_fake)?;
        let resid_fake: Vec<f64> = (0..f2.len())
            .map(|i| f2[i] - (s.z_fake[i] - x_fake[i]))
            .collect();
        acc[1] += sq_norm(&resid_fake) * inv_b;
        let fake_scale = 2.0 * weights.lambda_p * inv_b;
        let mut cot1 = vec![0.0; f1.len()];
        if weights.lambda_p != 0.0 {
            let cot2: Vec<f64> = resid_fake.iter().map(|r| fake_scale * r).collect();
            let gx = model
                .vjp(&trace2, &cot2, grads, Some((s.cond, shift.a)), true)?
                .expect("input gradient requested");
            for i in 0..cot1.len() {
                cot1[i] = -t * ((1.0 - tf) * gx[i] + fake_scale * resid_fake[i]);
            }
        }

        // endpoint-space mixed residual (gradient scaled by λ_e)
        let target = t_mix(&s.path.x, &v_fake, &s.path.x_t, t, lambda)?;
        let mut resid_mix = vec![0.0; f1.len()];
        let w = t * (1.0 - t);
        let mut sup = 0.0;
        let mut cons = 0.0;
        let mut dv = 0.0;
        for i in 0..f1.len() {
            resid_mix[i] = s.path.x_t[i] - t * f1[i] - target[i];
            let r_sup = f1[i] - s.path.v_data[i];
            let r_cons = f1[i] - v_fake[i];
            acc[0] += r_sup * r_sup * inv_b;
            sup += w * r_sup * r_sup;
            cons += w * r_cons * r_cons;
            dv += r_cons * r_cons;
        }
        acc[2] += sup * inv_b;
        acc[3] += cons * inv_b;
        acc[4] += ((1.0 - t) / t) * sq_norm(&resid_mix) * inv_b;
        acc[5] += dv.sqrt() * inv_b;
        acc[6] += t * inv_b;
        if weights.lambda_e != 0.0 {
            let k = -2.0 * weights.lambda_e * inv_b * (1.0 - t);
            for i in 0..cot1.len() {
                cot1[i] += k * resid_mix[i];
            }
        }
        model.vjp(&trace1, &cot1, grads, Some((s.cond, 1.0)), false)?;
        Ok(())
    })?;

    let [fm, fake, sup, cons, mix, dv, t_sum] = acc;
    let t_lo = batch
        .samples
        .iter()
        .map(|s| s.path.t)
        .fold(f64::INFINITY, f64::min);
    let t_hi = batch
        .samples
        .iter()
        .map(|s| s.path.t)
        .fold(f64::NEG_INFINITY, f64::max);
    let report = LossReport {
        l_fm: fm,
        l_fake: fake,
        l_sup: sup,
        l_cons: cons,
        l_mix: mix,
        g_apex: (1.0 - lambda) * sup + lambda * cons,
        l_apex: weights.lambda_p * fake + weights.lambda_e * mix,
        delta_v_norm: dv,
        weights,
        batch_size: batch.len(),
        t_mean: t_sum,
        t_lo,
        t_hi,
    };
    if !report.l_apex.is_finite() {
        return Err(ApexError::Numeric(format!(
            "objective is non-finite: l_fake={fake}, l_mix={mix}"
        )));
    }
    Ok((report, grads))
}

/// Monte-Carlo Fisher-divergence estimate with its standard error.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct FisherEstimate {
    pub mean: f64,
    pub std_err: f64,
    pub n: usize,
}

/// Estimates `E||s_θ − s_mix||²` over points drawn from the model's fake
/// trajectories: a data-pair point `(x_t, t)` is mapped to its implied
/// clean sample and re-noised at a fresh `(z'', t'')`.
pub fn fisher_estimate<R: Rng + ?Sized>(
    model: &VelocityModel,
    oracle: &OracleDist,
    cond: usize,
    shift: ShiftSpec,
    lambda: f64,
    n_samples: usize,
    t_min: f64,
    t_max: f64,
    rng: &mut R,
) -> Result<FisherEstimate> {
    if n_samples == 0 {
        return Err(ApexError::InvalidArgument(
            "fisher_estimate needs n_samples >= 1".into(),
        ));
    }
    let (c, c_fake) = branch_conditions(model, cond, shift)?;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..n_samples {
        let (x, z) = oracle.sample_pair(cond, rng)?;
        let t = t_min + (t_max - t_min) * rng.gen::<f64>();
        let path = interpolate(&x, &z, t)?;
        let z2: Vec<f64> = (0..oracle.dim())
            .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
            .collect();
        let t2 = t_min + (t_max - t_min) * rng.gen::<f64>();
        let fake = make_fake(model, &path, &c, &c_fake, &z2, t2)?;
        let scores = induced_scores(model, oracle, cond, &fake.x_t_fake, t2, shift, lambda)?;
        let gap: f64 = scores
            .s_theta
            .iter()
            .zip(&scores.s_mix)
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum();
        sum += gap;
        sum_sq += gap * gap;
    }
    let n = n_samples as f64;
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean).max(0.0);
    Ok(FisherEstimate {
        mean,
        std_err: (var / n).sqrt(),
        n: n_samples,
    })
}
