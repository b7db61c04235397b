//! Linear noise-to-data paths, the velocity-regression loss, low-noise
//! augmentation of preceding tokens and the Euler sampler.
//!
//! Convention: `t = 0` is pure noise `x_0`, `t = 1` is data `X_T`, and
//! `x_t = (1 - t) x_0 + t X_T` with constant velocity `u_t = X_T - x_0`.

use ndarray::{Array2, Zip};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct FlowState {
    pub t: f64,
    pub x0: Array2<f64>,
    pub x_t: Array2<f64>,
    pub u_t: Array2<f64>,
}

impl FlowState {
    pub fn new(target: &Array2<f64>, x0: Array2<f64>, t: f64) -> Self {
        let mut x_t = Array2::zeros(target.dim());
        Zip::from(&mut x_t)
            .and(&x0)
            .and(target)
            .for_each(|x, n, d| *x = (1.0 - t) * n + t * d);
        let u_t = target - &x0;
        Self { t, x0, x_t, u_t }
    }
}

pub fn standard_normal(rows: usize, cols: usize, rng: &mut impl Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(rng))
}

/// `sigmoid(z)` with `z ~ N(mu, sigma^2)`.
pub fn sample_logit_normal(mu: f64, sigma: f64, rng: &mut impl Rng) -> f64 {
    let z = Normal::new(mu, sigma)
        .expect("sigma must be finite and >= 0")
        .sample(rng);
    1.0 / (1.0 + (-z).exp())
}

pub fn mean_squared(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let n = a.len().max(1) as f64;
    Zip::from(a).and(b).fold(0.0, |s, x, y| s + (x - y) * (x - y)) / n
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeSampling {
    pub mu: f64,
    pub sigma: f64,
}

impl Default for TimeSampling {
    fn default() -> Self {
        Self { mu: 0.0, sigma: 1.0 }
    }
}

/// Loss of an arbitrary velocity predictor: draws `t` and `x_0` from `rng`
/// and returns `mean((v(x_t, t) - u_t)^2)`.
pub fn fm_loss_with(
    target: &Array2<f64>,
    times: TimeSampling,
    rng: &mut impl Rng,
    mut velocity: impl FnMut(&FlowState) -> Result<Array2<f64>>,
) -> Result<f64> {
    let t = sample_logit_normal(times.mu, times.sigma, rng);
    let x0 = standard_normal(target.nrows(), target.ncols(), rng);
    let state = FlowState::new(target, x0, t);
    let v = velocity(&state)?;
    if v.dim() != state.u_t.dim() {
        return Err(Error::Shape(format!(
            "velocity {:?} vs target {:?}",
            v.dim(),
            state.u_t.dim()
        )));
    }
    Ok(mean_squared(&v, &state.u_t))
}

/// Noise levels for augmenting preceding tokens, as fractions of a
/// 1000-position scheduler (`0.05` is position 50).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub min_level: f64,
    pub max_level: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            min_level: 0.0,
            max_level: 0.05,
        }
    }
}

impl AugmentConfig {
    /// `E[(X~ - X)^2]` minus its squared mean for one entry with clean value `x`.
    pub fn deviation_variance(&self, x: f64) -> f64 {
        let (a, b) = (self.min_level, self.max_level);
        let e1 = (a + b) / 2.0;
        let e2 = (a * a + a * b + b * b) / 3.0;
        e2 * (1.0 + x * x) - e1 * e1 * x * x
    }
}

/// `X~ = (1 - s) X + s eps` with `s ~ U[min_level, max_level]`; returns the
/// augmented tokens and `s`.
pub fn augment_preceding(x: &Array2<f64>, cfg: &AugmentConfig, rng: &mut impl Rng) -> (Array2<f64>, f64) {
    let s = if cfg.max_level > cfg.min_level {
        rng.random_range(cfg.min_level..=cfg.max_level)
    } else {
        cfg.min_level
    };
    if s == 0.0 {
        return (x.clone(), 0.0);
    }
    let eps = standard_normal(x.nrows(), x.ncols(), rng);
    let mut out = Array2::zeros(x.dim());
    Zip::from(&mut out)
        .and(x)
        .and(&eps)
        .for_each(|o, x, e| *o = (1.0 - s) * x + s * e);
    (out, s)
}

/// Integrates `dx/dt = v(x, t)` from `t = 0` to `t = 1` with `steps`
/// uniform Euler steps.
pub fn euler(
    x0: Array2<f64>,
    steps: usize,
    mut velocity: impl FnMut(&Array2<f64>, f64) -> Result<Array2<f64>>,
) -> Result<Array2<f64>> {
    if steps == 0 {
        return Err(Error::Config("sampler needs at least one step".into()));
    }
    let dt = 1.0 / steps as f64;
    let mut x = x0;
    for k in 0..steps {
        let t = k as f64 * dt;
        let v = velocity(&x, t)?;
        if v.iter().any(|a| !a.is_finite()) {
            return Err(Error::NonFinite(format!("velocity at step {k} (t = {t})")));
        }
        x.scaled_add(dt, &v);
    }
    Ok(x)
}
