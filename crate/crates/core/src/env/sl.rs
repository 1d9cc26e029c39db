use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Hidden state of the supervised unit test. When `s = 1` the first target
/// has variance `sigma^2`; when `s = 0` it is identically zero.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SlEnvState {
    pub s: u8,
    pub sigma: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct SlPrediction {
    pub y1_hat: f64,
    pub y2_hat: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SlStep {
    pub targets: (f64, f64),
    pub loss: f64,
    pub next: SlEnvState,
}

impl SlEnvState {
    /// Starts with the variance switched on.
    pub fn reset(sigma: f64, _rng: &mut RngStream) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "sigma must be > 0, got {sigma}"
            )));
        }
        Ok(Self { s: 1, sigma })
    }

    /// Draws both targets (always two normal draws), scores the prediction by
    /// mean squared error and switches the variance off iff `y2_hat > 0.5`.
    pub fn step(&self, pred: SlPrediction, rng: &mut RngStream) -> SlStep {
        let z1 = rng.normal(0.0, 1.0);
        let z2 = rng.normal(0.0, 1.0);
        let y1 = if self.s == 1 { self.sigma * z1 } else { 0.0 };
        let y2 = z2;
        let loss = ((pred.y1_hat - y1).powi(2) + (pred.y2_hat - y2).powi(2)) / 2.0;
        let next = Self {
            s: if pred.y2_hat > 0.5 { 0 } else { 1 },
            sigma: self.sigma,
        };
        SlStep {
            targets: (y1, y2),
            loss,
            next,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Role, StreamId};

    fn rng(seed: u64) -> RngStream {
        RngStream::new(seed, StreamId::new(0, Role::EnvStep, 0))
    }

    #[test]
    fn reset_cases() {
        let s = SlEnvState::reset(2.0, &mut rng(0)).unwrap();
        assert_eq!(s, SlEnvState { s: 1, sigma: 2.0 });
        assert_eq!(s, SlEnvState::reset(2.0, &mut rng(0)).unwrap());
        assert!(SlEnvState::reset(0.0, &mut rng(0)).is_err());
        assert!(SlEnvState::reset(-1.0, &mut rng(0)).is_err());
    }

    #[test]
    fn zero_variance_target() {
        let state = SlEnvState { s: 0, sigma: 2.0 };
        let mut r = rng(1);
        for _ in 0..100 {
            assert_eq!(state.step(SlPrediction::default(), &mut r).targets.0, 0.0);
        }
    }

    #[test]
    fn strict_threshold() {
        let state = SlEnvState { s: 1, sigma: 2.0 };
        let mut r = rng(2);
        let p = |y2_hat| SlPrediction {
            y1_hat: 0.0,
            y2_hat,
        };
        assert_eq!(state.step(p(0.6), &mut r).next.s, 0);
        assert_eq!(state.step(p(0.5), &mut r).next.s, 1);
        assert_eq!(state.step(p(0.5000001), &mut r).next.s, 0);
    }

    fn mean_loss(s: u8, n: usize, seed: u64) -> f64 {
        let state = SlEnvState { s, sigma: 2.0 };
        let mut r = rng(seed);
        (0..n)
            .map(|_| state.step(SlPrediction::default(), &mut r).loss)
            .sum::<f64>()
            / n as f64
    }

    #[test]
    fn monte_carlo_loss() {
        // E[(y1^2 + y2^2) / 2] = (s sigma^2 + 1) / 2.
        let on = mean_loss(1, 100_000, 3);
        assert!((on - 2.5).abs() < 0.05, "{on}");
        let off = mean_loss(0, 100_000, 4);
        let gap = on - off;
        assert!((gap / 2.0 - 1.0).abs() < 0.03, "gap {gap}");
    }
}
