//! Forward diffusion process over real-valued latents.
//!
//! One step of the chain is `x_t = sqrt(a_t) * x_{t-1} + sqrt(1 - a_t) * eps`,
//! and composing steps gives the closed form
//! `x_t = sqrt(abar_t) * x_0 + sqrt(1 - abar_t) * eps` with `abar_t` the running
//! product of the per-step coefficients. Noise is always passed in by the
//! caller; nothing here samples.

use std::fmt::Write as _;

use thiserror::Error;

pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 0.02;
pub const DEFAULT_STEPS: usize = 1000;

#[derive(Debug, Error, PartialEq)]
pub enum DiffusionError {
    #[error("alpha {0} outside (0, 1]")]
    AlphaOutOfRange(f64),
    #[error("noise has {noise} values, state has {state}")]
    DimensionMismatch { state: usize, noise: usize },
    #[error("timestep {t} outside 1..={len}")]
    TimestepOutOfRange { t: usize, len: usize },
    #[error("schedule needs 0 < beta_start <= beta_end < 1, got {start}..{end}")]
    BetaOrdering { start: f64, end: f64 },
    #[error("schedule needs at least one step")]
    EmptySchedule,
    #[error("non-finite value in latent state")]
    NonFinite,
    #[error("schedule table line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Per-step coefficients and their running products, indexed from t = 1.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    alphas: Vec<f64>,
    cumulative: Vec<f64>,
}

impl NoiseSchedule {
    pub fn from_alphas(alphas: Vec<f64>) -> Result<Self, DiffusionError> {
        if alphas.is_empty() {
            return Err(DiffusionError::EmptySchedule);
        }
        if let Some(&a) = alphas.iter().find(|&&a| !(a > 0.0 && a <= 1.0)) {
            return Err(DiffusionError::AlphaOutOfRange(a));
        }
        let cumulative = alphas
            .iter()
            .scan(1.0, |acc, a| {
                *acc *= a;
                Some(*acc)
            })
            .collect();
        Ok(Self { alphas, cumulative })
    }

    /// `a_t = 1 - b_t` with `b` linearly spaced over `[beta_start, beta_end]`
    /// inclusive of both ends.
    pub fn linear(beta_start: f64, beta_end: f64, steps: usize) -> Result<Self, DiffusionError> {
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(DiffusionError::BetaOrdering {
                start: beta_start,
                end: beta_end,
            });
        }
        if steps == 0 {
            return Err(DiffusionError::EmptySchedule);
        }
        let alphas = (0..steps)
            .map(|i| {
                let beta = if steps == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
                };
                1.0 - beta
            })
            .collect();
        Self::from_alphas(alphas)
    }

    pub fn len(&self) -> usize {
        self.alphas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alphas.is_empty()
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn alpha(&self, t: usize) -> Result<f64, DiffusionError> {
        self.check_t(t)?;
        Ok(self.alphas[t - 1])
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64, DiffusionError> {
        self.check_t(t)?;
        Ok(self.cumulative[t - 1])
    }

    fn check_t(&self, t: usize) -> Result<(), DiffusionError> {
        if t == 0 || t > self.alphas.len() {
            return Err(DiffusionError::TimestepOutOfRange {
                t,
                len: self.alphas.len(),
            });
        }
        Ok(())
    }

    /// One alpha per line, shortest round-trip decimal form.
    pub fn to_table(&self) -> String {
        let mut out = String::with_capacity(self.alphas.len() * 22);
        for a in &self.alphas {
            writeln!(out, "{a:?}").unwrap();
        }
        out
    }

    /// Inverse of [`to_table`](Self::to_table). Blank lines and `#` comments are skipped.
    pub fn from_table(text: &str) -> Result<Self, DiffusionError> {
        let mut alphas = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let a: f64 = line.parse().map_err(|e| DiffusionError::Parse {
                line: i + 1,
                message: format!("{e}"),
            })?;
            alphas.push(a);
        }
        Self::from_alphas(alphas)
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self::linear(DEFAULT_BETA_START, DEFAULT_BETA_END, DEFAULT_STEPS)
            .expect("default schedule is valid")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentState {
    values: Vec<f64>,
    timestep: usize,
}

impl LatentState {
    pub fn new(values: Vec<f64>, timestep: usize) -> Result<Self, DiffusionError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(DiffusionError::NonFinite);
        }
        Ok(Self { values, timestep })
    }

    /// Clean sample at t = 0.
    pub fn initial(values: Vec<f64>) -> Result<Self, DiffusionError> {
        Self::new(values, 0)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn timestep(&self) -> usize {
        self.timestep
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

fn check_noise(state: &LatentState, noise: &[f64]) -> Result<(), DiffusionError> {
    if state.values.len() != noise.len() {
        return Err(DiffusionError::DimensionMismatch {
            state: state.values.len(),
            noise: noise.len(),
        });
    }
    Ok(())
}

fn mix(x: &[f64], signal: f64, noise_scale: f64, noise: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(noise)
        .map(|(x, e)| signal * x + noise_scale * e)
        .collect()
}

/// Advances the chain by one step.
pub fn forward_step(
    x_prev: &LatentState,
    alpha_t: f64,
    noise: &[f64],
) -> Result<LatentState, DiffusionError> {
    if !(alpha_t > 0.0 && alpha_t <= 1.0) {
        return Err(DiffusionError::AlphaOutOfRange(alpha_t));
    }
    check_noise(x_prev, noise)?;
    LatentState::new(
        mix(&x_prev.values, alpha_t.sqrt(), (1.0 - alpha_t).sqrt(), noise),
        x_prev.timestep + 1,
    )
}

/// Jumps from the clean sample directly to step `t`.
pub fn forward_marginal(
    x0: &LatentState,
    schedule: &NoiseSchedule,
    t: usize,
    noise: &[f64],
) -> Result<LatentState, DiffusionError> {
    let abar = schedule.alpha_bar(t)?;
    check_noise(x0, noise)?;
    LatentState::new(
        mix(&x0.values, abar.sqrt(), (1.0 - abar).sqrt(), noise),
        x0.timestep + t,
    )
}
