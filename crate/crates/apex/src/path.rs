//! The linear interpolation path between data and noise, and the
//! score–velocity bridge it induces.
//!
//! A pair `(x, z)` of data and noise is connected by the straight path
//! `x_t = t·z + (1−t)·x`, whose per-pair velocity is the constant `z − x`.
//! Three consequences of that construction power everything else in the
//! crate:
//!
//! - the endpoint predictor `x_t − t·F` recovers the clean sample implied
//!   by a velocity estimate `F`,
//! - the marginal score and the conditional-mean velocity determine each
//!   other: `s = −(x_t + (1−t)·v)/t` and `v = −(x_t + t·s)/(1−t)`,
//! - velocity differences map to score differences with factor `−ω(t)`
//!   where `ω(t) = t/(1−t)`.
//!
//! All functions here are pure and allocation is limited to the returned
//! vectors; they may be called from any number of threads.

use crate::error::{ensure_same_dim, ApexError, Result};

/// Lower clamp for stochastic time sampling. `1/t` blows up below this.
pub const DEFAULT_T_MIN: f64 = 0.01;
/// Upper clamp for stochastic time sampling. `ω(t)` blows up above this.
pub const DEFAULT_T_MAX: f64 = 0.99;

/// One point on the interpolation path together with its regression target.
#[derive(Debug, Clone, PartialEq)]
pub struct PathPoint {
    /// Clean data sample.
    pub x: Vec<f64>,
    /// Noise sample.
    pub z: Vec<f64>,
    /// Interpolation time in `[0, 1]`.
    pub t: f64,
    /// Interpolated state `t·z + (1−t)·x`.
    pub x_t: Vec<f64>,
    /// Per-pair target velocity `z − x`.
    pub v_data: Vec<f64>,
}

/// Builds the path point at time `t` for the pair `(x, z)`.
///
/// Errors on a dimension mismatch or `t` outside `[0, 1]`.
///
/// ```
/// let p = apex::path::interpolate(&[2.0, -2.0], &[0.0, 0.0], 0.5).unwrap();
/// assert_eq!(p.x_t, vec![1.0, -1.0]);
/// assert_eq!(p.v_data, vec![-2.0, 2.0]);
/// ```
pub fn interpolate(x: &[f64], z: &[f64], t: f64) -> Result<PathPoint> {
    ensure_same_dim("interpolate", x.len(), z.len())?;
    if !(0.0..=1.0).contains(&t) {
        return Err(ApexError::InvalidArgument(format!(
            "interpolation time must lie in [0, 1], got {t}"
        )));
    }
    let x_t = x
        .iter()
        .zip(z)
        .map(|(&xi, &zi)| t * zi + (1.0 - t) * xi)
        .collect();
    let v_data = z.iter().zip(x).map(|(&zi, &xi)| zi - xi).collect();
    Ok(PathPoint {
        x: x.to_vec(),
        z: z.to_vec(),
        t,
        x_t,
        v_data,
    })
}

/// Clean-sample prediction `x_t − t·F` implied by a velocity estimate `F`.
///
/// At `t = 0` the state is already clean and is returned unchanged.
///
/// ```
/// let x0 = apex::path::endpoint_predict(&[2.0, 0.0], &[1.0, 1.0], 0.5).unwrap();
/// assert_eq!(x0, vec![0.0, 1.0]);
/// ```
pub fn endpoint_predict(velocity: &[f64], x_t: &[f64], t: f64) -> Result<Vec<f64>> {
    ensure_same_dim("endpoint_predict", x_t.len(), velocity.len())?;
    if !(0.0..=1.0).contains(&t) {
        return Err(ApexError::InvalidArgument(format!(
            "endpoint_predict time must lie in [0, 1], got {t}"
        )));
    }
    Ok(x_t
        .iter()
        .zip(velocity)
        .map(|(&s, &f)| s - t * f)
        .collect())
}

/// Maps a velocity to the score it induces: `−(x_t + (1−t)·v)/t`.
///
/// Defined for `t ∈ (0, 1]`; the formula divides by `t`.
pub fn velocity_to_score(v: &[f64], x_t: &[f64], t: f64) -> Result<Vec<f64>> {
    ensure_same_dim("velocity_to_score", x_t.len(), v.len())?;
    if t <= 0.0 || t > 1.0 {
        return Err(ApexError::SingularTime {
            op: "velocity_to_score",
            t,
            domain: "(0, 1]",
        });
    }
    Ok(x_t
        .iter()
        .zip(v)
        .map(|(&s, &vi)| -(s + (1.0 - t) * vi) / t)
        .collect())
}

/// Maps a score to the velocity it induces: `−(x_t + t·s)/(1−t)`.
///
/// Inverse of [`velocity_to_score`] on `(0, 1)`; defined for `t ∈ [0, 1)`.
pub fn score_to_velocity(s: &[f64], x_t: &[f64], t: f64) -> Result<Vec<f64>> {
    ensure_same_dim("score_to_velocity", x_t.len(), s.len())?;
    if !(0.0..1.0).contains(&t) {
        return Err(ApexError::SingularTime {
            op: "score_to_velocity",
            t,
            domain: "[0, 1)",
        });
    }
    Ok(x_t
        .iter()
        .zip(s)
        .map(|(&xt, &si)| -(xt + t * si) / (1.0 - t))
        .collect())
}

/// Time weight `ω(t) = t/(1−t)`, defined for `t ∈ [0, 1)`.
///
/// ```
/// assert_eq!(apex::path::omega(0.5).unwrap(), 1.0);
/// ```
pub fn omega(t: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&t) {
        return Err(ApexError::SingularTime {
            op: "omega",
            t,
            domain: "[0, 1)",
        });
    }
    Ok(t / (1.0 - t))
}

/// The combined weight `t²/ω(t) = t(1−t)` that the endpoint losses reduce to.
///
/// Bounded by `1/4` on `[0, 1]`, which is why the losses are evaluated in
/// this form rather than dividing by `ω`.
pub fn endpoint_loss_weight(t: f64) -> f64 {
    t * (1.0 - t)
}
