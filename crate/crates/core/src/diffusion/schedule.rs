use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Linear,
    Cosine,
}

const MAX_BETA: f64 = 0.999;

/// Cumulative signal fractions `ᾱ_1..ᾱ_T`; `ᾱ_0` is taken as 1.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    pub kind: ScheduleKind,
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    /// Linear betas follow the 1e-4..2e-2 range of a 1000-step schedule,
    /// rescaled by `1000/T`; cosine uses the squared-cosine `ᾱ` curve with
    /// offset 0.008. Betas are capped at 0.999.
    pub fn new(steps: usize, kind: ScheduleKind) -> Result<Self> {
        if steps < 2 {
            return Err(Error::param("steps", format!("need at least 2, got {steps}")));
        }
        let betas: Vec<f64> = match kind {
            ScheduleKind::Linear => {
                let scale = 1000.0 / steps as f64;
                let (lo, hi) = (1e-4 * scale, 2e-2 * scale);
                (0..steps)
                    .map(|i| lo + (hi - lo) * i as f64 / (steps - 1) as f64)
                    .collect()
            }
            ScheduleKind::Cosine => {
                let f = |t: f64| {
                    let s = 0.008;
                    ((t / steps as f64 + s) / (1.0 + s) * std::f64::consts::FRAC_PI_2)
                        .cos()
                        .powi(2)
                };
                (0..steps)
                    .map(|i| 1.0 - f((i + 1) as f64) / f(i as f64))
                    .collect()
            }
        };
        let mut alpha_bar = Vec::with_capacity(steps);
        let mut acc = 1.0;
        for b in betas {
            acc *= 1.0 - b.clamp(0.0, MAX_BETA);
            alpha_bar.push(acc);
        }
        Ok(Self { kind, alpha_bar })
    }

    pub fn steps(&self) -> usize {
        self.alpha_bar.len()
    }

    /// `ᾱ_t` for `0 ≤ t ≤ T`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bar[t - 1]
        }
    }

    /// Per-step `α_t = ᾱ_t / ᾱ_{t-1}` for `1 ≤ t ≤ T`.
    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha_bar(t) / self.alpha_bar(t - 1)
    }

    pub fn beta(&self, t: usize) -> f64 {
        1.0 - self.alpha(t)
    }

    pub(crate) fn check_t(&self, t: usize, lo: usize, hi: usize) -> Result<()> {
        if t < lo || t > hi {
            return Err(Error::TimestepOutOfRange { t, lo, hi });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_step_linear_is_decreasing() {
        let s = NoiseSchedule::new(2, ScheduleKind::Linear).unwrap();
        assert!(s.alpha_bar(2) < s.alpha_bar(1));
        assert!(s.alpha_bar(1) < 1.0);
    }

    #[test]
    fn cosine_fifty_ends_below_five_percent() {
        let s = NoiseSchedule::new(50, ScheduleKind::Cosine).unwrap();
        assert!(s.alpha_bar(50) < 0.05);
        assert!(s.alpha_bar(50) > 0.0);
    }

    #[test]
    fn invariants_hold_for_both_kinds() {
        for kind in [ScheduleKind::Linear, ScheduleKind::Cosine] {
            for steps in [2, 3, 10, 50, 200, 1000] {
                let s = NoiseSchedule::new(steps, kind).unwrap();
                assert!(s.alpha_bar(steps) < 0.05, "{kind:?} {steps}");
                for t in 1..=steps {
                    assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
                    assert!(s.alpha_bar(t) > 0.0);
                    let a = s.alpha(t);
                    assert!(a > 0.0 && a < 1.0);
                }
            }
        }
    }

    #[test]
    fn too_few_steps_rejected() {
        assert!(NoiseSchedule::new(1, ScheduleKind::Linear).is_err());
    }
}
