//! The trainable velocity field: a small fully connected network over
//! `concat(x_t, sinusoidal time features, condition embedding)`.
//!
//! Differentiation is hand-derived layer backprop. [`VelocityModel::vjp`]
//! pulls an output cotangent back to flat parameter gradients and,
//! optionally, to the `x_t` slice of the input — the piece the fake-sample
//! construction needs, since gradients flow through the implied clean
//! sample into a second network evaluation. Stop-gradient is structural:
//! values meant to carry no gradient are produced by [`VelocityModel::forward`],
//! which records nothing.
//!
//! The contract for all of this is numerical: agreement with central finite
//! differences, certified by [`check_finite_diff`].

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_same_dim, ApexError, Result};

/// Smooth nonlinearities. Smoothness keeps finite-difference checks clean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Silu,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Silu => z / (1.0 + (-z).exp()),
        }
    }

    /// Derivative expressed through the pre-activation `z` and the
    /// activation value `a`.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Silu => {
                let sig = 1.0 / (1.0 + (-z).exp());
                sig * (1.0 + z * (1.0 - sig))
            }
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "tanh" => Ok(Activation::Tanh),
            "silu" => Ok(Activation::Silu),
            other => Err(ApexError::Config(format!(
                "unknown activation `{other}`; expected `tanh` or `silu`"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Silu => "silu",
        }
    }
}

/// Architecture descriptor for [`VelocityModel`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetSpec {
    /// Data dimension `d`; also the output width.
    pub data_dim: usize,
    /// Hidden layer widths; may be empty for a single linear layer.
    pub hidden: Vec<usize>,
    pub activation: Activation,
    /// Number of sinusoidal time frequencies; each contributes a sin and a
    /// cos feature.
    pub time_freqs: usize,
    /// Number of conditions `K` in the embedding table.
    pub cond_count: usize,
    /// Embedding width `e`.
    pub embed_dim: usize,
    /// When set, the embedding table lives in the flat parameter vector and
    /// receives gradients; otherwise it is a fixed seeded draw.
    pub learn_embeddings: bool,
}

impl NetSpec {
    pub fn feature_len(&self) -> usize {
        self.data_dim + 2 * self.time_freqs + self.embed_dim
    }

    /// Widths of the linear layers, input first, output last.
    pub fn layer_widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden.len() + 2);
        w.push(self.feature_len());
        w.extend_from_slice(&self.hidden);
        w.push(self.data_dim);
        w
    }

    fn layer_param_len(&self) -> usize {
        let w = self.layer_widths();
        w.windows(2).map(|p| p[0] * p[1] + p[1]).sum()
    }

    fn embed_table_len(&self) -> usize {
        self.cond_count * self.embed_dim
    }

    /// Total flat parameter count implied by the architecture.
    pub fn param_len(&self) -> usize {
        self.layer_param_len()
            + if self.learn_embeddings {
                self.embed_table_len()
            } else {
                0
            }
    }

    fn validate(&self) -> Result<()> {
        if self.data_dim == 0 {
            return Err(ApexError::InvalidArgument("data_dim must be positive".into()));
        }
        if self.time_freqs == 0 {
            return Err(ApexError::InvalidArgument(
                "time_freqs must be positive".into(),
            ));
        }
        if self.cond_count == 0 || self.embed_dim == 0 {
            return Err(ApexError::InvalidArgument(
                "cond_count and embed_dim must be positive".into(),
            ));
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return Err(ApexError::InvalidArgument(
                "hidden widths must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Affine condition shift `c ↦ a·c + b·1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftSpec {
    pub a: f64,
    pub b: f64,
}

impl ShiftSpec {
    /// The identity shift, which makes the shifted branch coincide with the
    /// real branch.
    pub fn identity() -> Self {
        Self { a: 1.0, b: 0.0 }
    }
}

/// Applies the affine shift elementwise.
///
/// ```
/// use apex::net::{shift_condition, ShiftSpec};
/// let shifted = shift_condition(&[2.0, 4.0], ShiftSpec { a: -0.5, b: 1.0 }).unwrap();
/// assert_eq!(shifted, vec![0.0, -1.0]);
/// ```
pub fn shift_condition(c: &[f64], shift: ShiftSpec) -> Result<Vec<f64>> {
    if !shift.a.is_finite() || !shift.b.is_finite() {
        return Err(ApexError::InvalidArgument(format!(
            "shift parameters must be finite, got a={}, b={}",
            shift.a, shift.b
        )));
    }
    if c.iter().any(|v| !v.is_finite()) {
        return Err(ApexError::InvalidArgument(
            "condition vector must be finite".into(),
        ));
    }
    Ok(c.iter().map(|&v| shift.a * v + shift.b).collect())
}

/// The velocity network with its flat 64-bit parameter vector.
#[derive(Debug, Clone)]
pub struct VelocityModel {
    spec: NetSpec,
    params: Vec<f64>,
    /// `K × e` row-major table when embeddings are not learned.
    fixed_embed: Vec<f64>,
}

/// Recorded activations of one traced forward pass, consumed by
/// [`VelocityModel::vjp`].
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Input to each linear layer; `inputs[0]` is the feature vector.
    inputs: Vec<Vec<f64>>,
    /// Pre-activations of the hidden layers.
    preacts: Vec<Vec<f64>>,
}

impl VelocityModel {
    /// Seeded initialization: weights `N(0, 1/fan_in)`, biases zero, and a
    /// unit-normal embedding table.
    pub fn new_seeded(spec: NetSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let widths = spec.layer_widths();
        let mut params = Vec::with_capacity(spec.param_len());
        for pair in widths.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let scale = 1.0 / (fan_in as f64).sqrt();
            for _ in 0..fan_in * fan_out {
                params.push(scale * rng.sample::<f64, _>(StandardNormal));
            }
            params.extend(std::iter::repeat(0.0).take(fan_out));
        }
        let table: Vec<f64> = (0..spec.embed_table_len())
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        let fixed_embed = if spec.learn_embeddings {
            params.extend_from_slice(&table);
            Vec::new()
        } else {
            table
        };
        debug_assert_eq!(params.len(), spec.param_len());
        Ok(Self {
            spec,
            params,
            fixed_embed,
        })
    }

    /// Rebuilds a model from its parts, checking the length invariant.
    pub fn from_parts(spec: NetSpec, params: Vec<f64>, fixed_embed: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        ensure_same_dim("VelocityModel params", spec.param_len(), params.len())?;
        let want_embed = if spec.learn_embeddings {
            0
        } else {
            spec.embed_table_len()
        };
        ensure_same_dim("VelocityModel embedding table", want_embed, fixed_embed.len())?;
        Ok(Self {
            spec,
            params,
            fixed_embed,
        })
    }

    pub fn spec(&self) -> &NetSpec {
        &self.spec
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        ensure_same_dim("set_params", self.params.len(), params.len())?;
        self.params.copy_from_slice(params);
        Ok(())
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Raw fixed embedding table bytes for checkpointing; empty when the
    /// table is learned.
    pub fn fixed_embed(&self) -> &[f64] {
        &self.fixed_embed
    }

    fn embed_offset(&self) -> usize {
        self.spec.layer_param_len()
    }

    /// Embedding row of a condition index.
    pub fn embedding(&self, cond: usize) -> Result<Vec<f64>> {
        if cond >= self.spec.cond_count {
            return Err(ApexError::InvalidArgument(format!(
                "condition {cond} out of range 0..{}",
                self.spec.cond_count
            )));
        }
        let e = self.spec.embed_dim;
        let table = if self.spec.learn_embeddings {
            &self.params[self.embed_offset()..]
        } else {
            &self.fixed_embed
        };
        Ok(table[cond * e..(cond + 1) * e].to_vec())
    }

    /// Overwrites one embedding row; used by tests that need hand-set
    /// condition vectors.
    pub fn set_embedding(&mut self, cond: usize, row: &[f64]) -> Result<()> {
        ensure_same_dim("set_embedding", self.spec.embed_dim, row.len())?;
        if cond >= self.spec.cond_count {
            return Err(ApexError::InvalidArgument(format!(
                "condition {cond} out of range 0..{}",
                self.spec.cond_count
            )));
        }
        let e = self.spec.embed_dim;
        let off = cond * e;
        if self.spec.learn_embeddings {
            let base = self.embed_offset();
            self.params[base + off..base + off + e].copy_from_slice(row);
        } else {
            self.fixed_embed[off..off + e].copy_from_slice(row);
        }
        Ok(())
    }

    /// Assembles `concat(x_t, sin/cos time features, c)`.
    pub fn features(&self, x_t: &[f64], t: f64, c: &[f64]) -> Result<Vec<f64>> {
        ensure_same_dim("forward x_t", self.spec.data_dim, x_t.len())?;
        ensure_same_dim("forward condition", self.spec.embed_dim, c.len())?;
        let mut feat = Vec::with_capacity(self.spec.feature_len());
        feat.extend_from_slice(x_t);
        let mut freq = std::f64::consts::PI;
        for _ in 0..self.spec.time_freqs {
            feat.push((freq * t).sin());
            feat.push((freq * t).cos());
            freq *= 2.0;
        }
        feat.extend_from_slice(c);
        Ok(feat)
    }

    /// Network evaluation; pure in `(params, inputs)` and bitwise
    /// deterministic.
    pub fn forward(&self, x_t: &[f64], t: f64, c: &[f64]) -> Result<Vec<f64>> {
        let feat = self.features(x_t, t, c)?;
        Ok(self.run(feat, None))
    }

    /// Evaluation that records the activations needed for [`Self::vjp`].
    pub fn forward_traced(&self, x_t: &[f64], t: f64, c: &[f64]) -> Result<(Vec<f64>, ForwardTrace)> {
        let feat = self.features(x_t, t, c)?;
        let mut trace = ForwardTrace {
            inputs: Vec::with_capacity(self.spec.hidden.len() + 1),
            preacts: Vec::with_capacity(self.spec.hidden.len()),
        };
        let out = self.run(feat, Some(&mut trace));
        Ok((out, trace))
    }

    fn run(&self, feat: Vec<f64>, mut trace: Option<&mut ForwardTrace>) -> Vec<f64> {
        let widths = self.spec.layer_widths();
        let n_layers = widths.len() - 1;
        let mut h = feat;
        let mut off = 0;
        for l in 0..n_layers {
            let (fan_in, fan_out) = (widths[l], widths[l + 1]);
            let w = &self.params[off..off + fan_in * fan_out];
            let b = &self.params[off + fan_in * fan_out..off + fan_in * fan_out + fan_out];
            off += fan_in * fan_out + fan_out;
            let mut z = vec![0.0; fan_out];
            for (i, zi) in z.iter_mut().enumerate() {
                *zi = b[i] + dot(&w[i * fan_in..(i + 1) * fan_in], &h);
            }
            let last = l == n_layers - 1;
            if let Some(tr) = trace.as_deref_mut() {
                tr.inputs.push(h);
                if !last {
                    tr.preacts.push(z.clone());
                }
            }
            h = if last {
                z
            } else {
                z.into_iter().map(|v| self.spec.activation.apply(v)).collect()
            };
        }
        h
    }

    /// Vector–Jacobian product of one traced forward pass.
    ///
    /// Accumulates `∂(cotangent·output)/∂params` into `grads` (flat, same
    /// layout as [`Self::params`]). When `embed_chain = (cond, scale)` is
    /// given and embeddings are learned, the condition-slice cotangent is
    /// chained into that embedding row with the given scale (the scale is
    /// `a` when the evaluation used a shifted condition). Returns the
    /// cotangent with respect to `x_t` when `want_input_grad` is set.
    pub fn vjp(
        &self,
        trace: &ForwardTrace,
        cotangent: &[f64],
        grads: &mut [f64],
        embed_chain: Option<(usize, f64)>,
        want_input_grad: bool,
    ) -> Result<Option<Vec<f64>>> {
        ensure_same_dim("vjp cotangent", self.spec.data_dim, cotangent.len())?;
        ensure_same_dim("vjp grads", self.params.len(), grads.len())?;
        let widths = self.spec.layer_widths();
        let n_layers = widths.len() - 1;
        let layer_offsets: Vec<usize> = {
            let mut offs = Vec::with_capacity(n_layers);
            let mut off = 0;
            for l in 0..n_layers {
                offs.push(off);
                off += widths[l] * widths[l + 1] + widths[l + 1];
            }
            offs
        };

        let need_input =
            want_input_grad || (self.spec.learn_embeddings && embed_chain.is_some());
        let mut g = cotangent.to_vec();
        for l in (0..n_layers).rev() {
            let (fan_in, fan_out) = (widths[l], widths[l + 1]);
            let off = layer_offsets[l];
            // Hidden layers carry an activation after the linear map.
            if l < n_layers - 1 {
                let z = &trace.preacts[l];
                let a_in = &trace.inputs[l + 1];
                for i in 0..fan_out {
                    g[i] *= self.spec.activation.derivative(z[i], a_in[i]);
                }
            }
            let h = &trace.inputs[l];
            let w = &self.params[off..off + fan_in * fan_out];
            let (gw, gb) = grads[off..off + fan_in * fan_out + fan_out]
                .split_at_mut(fan_in * fan_out);
            for i in 0..fan_out {
                axpy(g[i], h, &mut gw[i * fan_in..(i + 1) * fan_in]);
                gb[i] += g[i];
            }
            if l > 0 || need_input {
                let mut dh = vec![0.0; fan_in];
                for i in 0..fan_out {
                    axpy(g[i], &w[i * fan_in..(i + 1) * fan_in], &mut dh);
                }
                g = dh;
            } else {
                g = Vec::new();
            }
        }

        if self.spec.learn_embeddings {
            if let Some((cond, scale)) = embed_chain {
                let e = self.spec.embed_dim;
                let c_start = self.spec.data_dim + 2 * self.spec.time_freqs;
                let base = self.embed_offset() + cond * e;
                for i in 0..e {
                    grads[base + i] += scale * g[c_start + i];
                }
            }
        }
        Ok(if want_input_grad {
            Some(g[..self.spec.data_dim].to_vec())
        } else {
            None
        })
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for k in 0..chunks {
        let i = 4 * k;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut rest = 0.0;
    for i in 4 * chunks..a.len() {
        rest += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + rest
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Outcome of a finite-difference gradient check.
#[derive(Debug, Clone, Serialize)]
pub struct FiniteDiffReport {
    pub max_rel_err: f64,
    /// Coordinate with the worst relative error.
    pub worst_index: usize,
    /// Coordinates whose relative error exceeded the tolerance.
    pub failed_indices: Vec<usize>,
    pub pass: bool,
}

/// Compares an analytic gradient coordinatewise against central finite
/// differences `(loss(θ+h·eᵢ) − loss(θ−h·eᵢ))/(2h)`.
///
/// Relative error uses an absolute floor of `1e-8`: coordinates where both
/// sides are below the floor count as exact. Brute force over every
/// coordinate, so the parameter count is capped at `10^4`.
pub fn check_finite_diff<F>(
    model: &VelocityModel,
    loss: F,
    analytic: &[f64],
    h: f64,
    tol: f64,
) -> Result<FiniteDiffReport>
where
    F: Fn(&VelocityModel) -> Result<f64>,
{
    const ABS_FLOOR: f64 = 1e-8;
    let n = model.num_params();
    if n > 10_000 {
        return Err(ApexError::InvalidArgument(format!(
            "finite-difference check capped at 10000 params, model has {n}"
        )));
    }
    ensure_same_dim("check_finite_diff gradient", n, analytic.len())?;
    let mut probe = model.clone();
    let mut max_rel_err = 0.0;
    let mut worst_index = 0;
    let mut failed_indices = Vec::new();
    for i in 0..n {
        let orig = probe.params()[i];
        probe.params_mut()[i] = orig + h;
        let plus = loss(&probe)?;
        probe.params_mut()[i] = orig - h;
        let minus = loss(&probe)?;
        probe.params_mut()[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(ApexError::Numeric(format!(
                "loss non-finite while probing coordinate {i}"
            )));
        }
        let fd = (plus - minus) / (2.0 * h);
        let scale = fd.abs().max(analytic[i].abs());
        let rel = if scale < ABS_FLOOR {
            0.0
        } else {
            (fd - analytic[i]).abs() / scale.max(ABS_FLOOR)
        };
        if rel > max_rel_err {
            max_rel_err = rel;
            worst_index = i;
        }
        if rel >= tol {
            failed_indices.push(i);
        }
    }
    Ok(FiniteDiffReport {
        max_rel_err,
        worst_index,
        failed_indices,
        pass: max_rel_err < tol,
    })
}
