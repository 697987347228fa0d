//! Linear-beta noise schedule and the pure forward/reverse step math.
//!
//! Timesteps are 1-based: `t` in `[1, T]`, with `alpha_bar(0) := 1`.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    pub t_steps: usize,
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    sigma: Vec<f64>,
}

impl NoiseSchedule {
    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t - 1]
    }

    /// Cumulative product of alphas up to `t`; `alpha_bar(0) = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bar[t - 1]
        }
    }

    /// Reverse-noise scale: posterior standard deviation
    /// `sqrt(((1 - alpha_bar(t-1)) / (1 - alpha_bar(t))) * beta(t))`.
    pub fn sigma(&self, t: usize) -> f64 {
        self.sigma[t - 1]
    }

    pub fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.t_steps {
            Err(Error::TimestepOutOfRange {
                t,
                max: self.t_steps,
            })
        } else {
            Ok(())
        }
    }

    /// Evenly spaced descending sub-schedule of `n_steps` timesteps ending
    /// at 1. `n_steps == T` reproduces the full schedule.
    pub fn subsequence(&self, n_steps: usize) -> Vec<usize> {
        assert!(n_steps >= 1 && n_steps <= self.t_steps);
        if n_steps == 1 {
            return vec![self.t_steps];
        }
        let mut ts: Vec<usize> = (1..=n_steps)
            .rev()
            .map(|k| (k - 1) * (self.t_steps - 1) / (n_steps - 1) + 1)
            .collect();
        ts.dedup();
        ts
    }
}

pub fn build_schedule(t_steps: usize, beta_min: f64, beta_max: f64) -> Result<NoiseSchedule> {
    if t_steps < 1 {
        return Err(Error::Schedule("T must be >= 1".into()));
    }
    if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
        return Err(Error::Schedule(format!(
            "beta bounds ({beta_min}, {beta_max}) must satisfy 0 < min <= max < 1"
        )));
    }
    let beta: Vec<f64> = (0..t_steps)
        .map(|i| {
            if t_steps == 1 {
                beta_min
            } else {
                beta_min + (beta_max - beta_min) * i as f64 / (t_steps - 1) as f64
            }
        })
        .collect();
    let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
    let mut alpha_bar = Vec::with_capacity(t_steps);
    let mut prod = 1.0;
    for &a in &alpha {
        prod *= a;
        alpha_bar.push(prod);
    }
    let sigma: Vec<f64> = (0..t_steps)
        .map(|i| {
            let prev = if i == 0 { 1.0 } else { alpha_bar[i - 1] };
            (((1.0 - prev) / (1.0 - alpha_bar[i])) * beta[i]).sqrt()
        })
        .collect();
    Ok(NoiseSchedule {
        t_steps,
        beta,
        alpha,
        alpha_bar,
        sigma,
    })
}

/// `x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps`
pub fn forward_noise(x0: &[f32], t: usize, eps: &[f32], schedule: &NoiseSchedule) -> Result<Vec<f32>> {
    schedule.check_t(t)?;
    assert_eq!(x0.len(), eps.len());
    let ab = schedule.alpha_bar(t);
    let signal = ab.sqrt() as f32;
    let noise = (1.0 - ab).sqrt() as f32;
    Ok(x0
        .iter()
        .zip(eps)
        .map(|(&x, &e)| signal * x + noise * e)
        .collect())
}

/// One stochastic reverse step:
/// `x_{t-1} = (x_t - ((1 - alpha_t) / sqrt(1 - alpha_bar_t)) eps_pred) / sqrt(alpha_t) + sigma_t noise`.
/// `noise` must be `None` (zero) at `t = 1`.
pub fn ddpm_reverse_step(
    x_t: &[f32],
    t: usize,
    eps_pred: &[f32],
    schedule: &NoiseSchedule,
    noise: Option<&[f32]>,
) -> Result<Vec<f32>> {
    schedule.check_t(t)?;
    if x_t.len() != eps_pred.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{}", x_t.len()),
            actual: format!("{}", eps_pred.len()),
            context: "ddpm_reverse_step".into(),
        });
    }
    assert!(
        t > 1 || noise.is_none(),
        "reverse noise must be zero at t = 1"
    );
    let alpha = schedule.alpha(t);
    let coef = ((1.0 - alpha) / (1.0 - schedule.alpha_bar(t)).sqrt()) as f32;
    let inv_sqrt_alpha = (1.0 / alpha.sqrt()) as f32;
    let sigma = schedule.sigma(t) as f32;
    let mut out: Vec<f32> = x_t
        .iter()
        .zip(eps_pred)
        .map(|(&x, &e)| inv_sqrt_alpha * (x - coef * e))
        .collect();
    if let Some(noise) = noise {
        assert_eq!(noise.len(), out.len());
        for (o, &n) in out.iter_mut().zip(noise) {
            *o += sigma * n;
        }
    }
    Ok(out)
}

/// One deterministic DDIM (eta = 0) step from `t_cur` to `t_prev`
/// (`t_prev = 0` produces the final sample).
pub fn ddim_step(
    x_t: &[f32],
    t_cur: usize,
    t_prev: usize,
    eps_pred: &[f32],
    schedule: &NoiseSchedule,
) -> Result<Vec<f32>> {
    schedule.check_t(t_cur)?;
    assert!(t_prev < t_cur);
    assert_eq!(x_t.len(), eps_pred.len());
    let ab_cur = schedule.alpha_bar(t_cur);
    let ab_prev = schedule.alpha_bar(t_prev);
    let sqrt_ab_cur = ab_cur.sqrt() as f32;
    let sqrt_one_minus_cur = (1.0 - ab_cur).sqrt() as f32;
    let sqrt_ab_prev = ab_prev.sqrt() as f32;
    let sqrt_one_minus_prev = (1.0 - ab_prev).sqrt() as f32;
    Ok(x_t
        .iter()
        .zip(eps_pred)
        .map(|(&x, &e)| {
            let x0_pred = (x - sqrt_one_minus_cur * e) / sqrt_ab_cur;
            sqrt_ab_prev * x0_pred + sqrt_one_minus_prev * e
        })
        .collect())
}
