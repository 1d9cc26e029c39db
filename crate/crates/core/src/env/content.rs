//! Content-recommendation world model.
//!
//! State `(g, W, x, y)`: loyalty logits `g` over user types, row-normalised
//! interest matrix `W` (users x articles), the current user `x` and the last
//! recorded article `y`. Serving article `y_hat` to user `x` raises the user's
//! loyalty by `alpha1 * W[x, y_hat]` and their interest in `y_hat` by `alpha2`
//! before the row is projected back onto the unit sphere.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{draw_categorical, l2_norm, softmax_into};
use crate::rng::RngStream;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContentConfig {
    pub n_users: usize,
    pub n_articles: usize,
    /// Covariate-shift rate.
    pub alpha1: f64,
    /// Concept-shift rate.
    pub alpha2: f64,
    /// Standard deviation of the initial `g` and `W` entries.
    pub init_std: f64,
}

impl Default for ContentConfig {
    fn default() -> Self {
        Self {
            n_users: 10,
            n_articles: 10,
            alpha1: 0.03,
            alpha2: 0.003,
            init_std: 0.03,
        }
    }
}

impl ContentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_users < 2 {
            return Err(Error::config("env.n_users", "must be >= 2"));
        }
        if self.n_articles < 2 {
            return Err(Error::config("env.n_articles", "must be >= 2"));
        }
        for (name, v) in [("env.alpha1", self.alpha1), ("env.alpha2", self.alpha2)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::config(name, "must be finite and >= 0"));
            }
        }
        if !(self.init_std > 0.0 && self.init_std.is_finite()) {
            return Err(Error::config("env.init_std", "must be > 0"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ContentRecState {
    pub g: Vec<f64>,
    /// Row-major `[n_users x n_articles]`.
    pub w: Vec<f64>,
    pub x: usize,
    pub y: usize,
    pub alpha1: f64,
    pub alpha2: f64,
    n_users: usize,
    n_articles: usize,
}

/// What happened in one interaction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContentStep {
    /// The user that was served.
    pub user: usize,
    /// The article that user clicked.
    pub click: usize,
}

impl ContentRecState {
    pub fn reset(config: &ContentConfig, rng: &mut RngStream) -> Result<Self> {
        config.validate()?;
        let (nu, na) = (config.n_users, config.n_articles);
        let g = (0..nu).map(|_| rng.normal(0.0, config.init_std)).collect();
        let mut w: Vec<f64> = (0..nu * na)
            .map(|_| rng.normal(0.0, config.init_std))
            .collect();
        for row in w.chunks_mut(na) {
            normalise(row);
        }
        let mut state = Self {
            g,
            w,
            x: 0,
            y: 0,
            alpha1: config.alpha1,
            alpha2: config.alpha2,
            n_users: nu,
            n_articles: na,
        };
        let mut buf = Vec::with_capacity(nu.max(na));
        state.x = state.draw_user(rng, &mut buf);
        state.y = state.draw_click(state.x, rng, &mut buf);
        Ok(state)
    }

    /// Builds a state from explicit parts.
    pub fn from_parts(
        g: Vec<f64>,
        w: Vec<f64>,
        x: usize,
        y: usize,
        alpha1: f64,
        alpha2: f64,
    ) -> Result<Self> {
        let nu = g.len();
        if nu == 0 || !w.len().is_multiple_of(nu) || w.is_empty() {
            return Err(Error::Shape {
                expected: nu,
                got: w.len(),
            });
        }
        let na = w.len() / nu;
        if x >= nu {
            return Err(Error::Index { index: x, len: nu });
        }
        if y >= na {
            return Err(Error::Index { index: y, len: na });
        }
        Ok(Self {
            g,
            w,
            x,
            y,
            alpha1,
            alpha2,
            n_users: nu,
            n_articles: na,
        })
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_articles(&self) -> usize {
        self.n_articles
    }

    pub fn interest_row(&self, user: usize) -> &[f64] {
        &self.w[user * self.n_articles..(user + 1) * self.n_articles]
    }

    /// `softmax(g)`.
    pub fn user_distribution(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.n_users);
        softmax_into(&self.g, &mut p);
        p
    }

    fn draw_user(&self, rng: &mut RngStream, buf: &mut Vec<f64>) -> usize {
        softmax_into(&self.g, buf);
        draw_categorical(buf, rng.uniform())
    }

    fn draw_click(&self, user: usize, rng: &mut RngStream, buf: &mut Vec<f64>) -> usize {
        softmax_into(self.interest_row(user), buf);
        draw_categorical(buf, rng.uniform())
    }

    /// Serves `y_hat` to the current user. Consumes exactly three uniforms:
    /// the click (from the interests the user arrived with), the next user,
    /// and the bookkeeping `y` for that next user.
    pub fn step(&mut self, y_hat: usize, rng: &mut RngStream) -> Result<ContentStep> {
        if y_hat >= self.n_articles {
            return Err(Error::Index {
                index: y_hat,
                len: self.n_articles,
            });
        }
        let user = self.x;
        let mut buf = Vec::with_capacity(self.n_users.max(self.n_articles));
        let click = self.draw_click(user, rng, &mut buf);

        let cell = user * self.n_articles + y_hat;
        self.g[user] += self.alpha1 * self.w[cell];
        self.w[cell] += self.alpha2;
        let na = self.n_articles;
        normalise(&mut self.w[user * na..(user + 1) * na]);

        self.x = self.draw_user(rng, &mut buf);
        self.y = self.draw_click(self.x, rng, &mut buf);
        Ok(ContentStep { user, click })
    }
}

fn normalise(row: &mut [f64]) {
    let n = l2_norm(row);
    if n > 0.0 {
        for v in row.iter_mut() {
            *v /= n;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Role, StreamId};

    fn rng(seed: u64, role: Role) -> RngStream {
        RngStream::new(seed, StreamId::new(0, role, 0))
    }

    fn row_norms_ok(s: &ContentRecState) -> bool {
        (0..s.n_users()).all(|u| (l2_norm(s.interest_row(u)) - 1.0).abs() < 1e-9)
    }

    #[test]
    fn reset_normalises_rows() {
        let s =
            ContentRecState::reset(&ContentConfig::default(), &mut rng(0, Role::EnvInit)).unwrap();
        assert!(row_norms_ok(&s));
        assert!(s.x < 10 && s.y < 10);
    }

    #[test]
    fn reset_reproducible() {
        let c = ContentConfig::default();
        let a = ContentRecState::reset(&c, &mut rng(4, Role::EnvInit)).unwrap();
        let b = ContentRecState::reset(&c, &mut rng(4, Role::EnvInit)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn reset_rejects_tiny_worlds() {
        let c = ContentConfig {
            n_users: 1,
            ..Default::default()
        };
        assert!(ContentRecState::reset(&c, &mut rng(0, Role::EnvInit)).is_err());
    }

    #[test]
    fn initial_users_near_uniform() {
        let c = ContentConfig::default();
        let mut counts = [0usize; 10];
        for seed in 0..10_000 {
            let s = ContentRecState::reset(
                &c,
                &mut RngStream::new(seed, StreamId::new(0, Role::EnvInit, 0)),
            )
            .unwrap();
            counts[s.x] += 1;
        }
        for c in counts {
            let f = c as f64 / 10_000.0;
            assert!((f - 0.1).abs() < 0.02, "{counts:?}");
        }
    }

    #[test]
    fn zero_rates_only_resample_user() {
        let c = ContentConfig {
            alpha1: 0.0,
            alpha2: 0.0,
            ..Default::default()
        };
        let mut s = ContentRecState::reset(&c, &mut rng(1, Role::EnvInit)).unwrap();
        let (g0, w0) = (s.g.clone(), s.w.clone());
        let mut r = rng(1, Role::EnvStep);
        for k in 0..50 {
            s.step(k % 10, &mut r).unwrap();
            assert_eq!(s.g, g0);
            // Renormalising an already unit row may move the last bit.
            for (a, b) in s.w.iter().zip(&w0) {
                assert!((a - b).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn hand_evaluated_update() {
        let mut s = ContentRecState::from_parts(
            vec![0.0, 0.0],
            vec![0.6, 0.8, 1.0, 0.0],
            0,
            0,
            0.03,
            0.003,
        )
        .unwrap();
        s.step(1, &mut rng(2, Role::EnvStep)).unwrap();
        assert!((s.g[0] - 0.024).abs() < 1e-15);
        assert_eq!(s.g[1], 0.0);
        let n = (0.6f64 * 0.6 + 0.803 * 0.803).sqrt();
        assert!((s.w[0] - 0.6 / n).abs() < 1e-15);
        assert!((s.w[1] - 0.803 / n).abs() < 1e-15);
        assert_eq!(&s.w[2..], &[1.0, 0.0]);
    }

    #[test]
    fn step_rejects_bad_article() {
        let mut s =
            ContentRecState::reset(&ContentConfig::default(), &mut rng(0, Role::EnvInit)).unwrap();
        assert!(matches!(
            s.step(10, &mut rng(0, Role::EnvStep)),
            Err(Error::Index { index: 10, len: 10 })
        ));
    }

    #[test]
    fn step_touches_only_served_row() {
        let mut s =
            ContentRecState::reset(&ContentConfig::default(), &mut rng(3, Role::EnvInit)).unwrap();
        let mut r = rng(3, Role::EnvStep);
        for k in 0..500 {
            let before = s.clone();
            let y_hat = k % 10;
            let out = s.step(y_hat, &mut r).unwrap();
            assert!(row_norms_ok(&s));
            for u in 0..10 {
                if u != out.user {
                    assert_eq!(s.interest_row(u), before.interest_row(u));
                    assert_eq!(s.g[u], before.g[u]);
                }
            }
            if before.interest_row(out.user)[y_hat] > 0.0 {
                assert!(s.g[out.user] >= before.g[out.user]);
            }
        }
    }

    #[test]
    fn fixed_recommendation_converges() {
        let mut s =
            ContentRecState::reset(&ContentConfig::default(), &mut rng(5, Role::EnvInit)).unwrap();
        let mut r = rng(5, Role::EnvStep);
        let k = 3;
        let mut last = s.w.iter().skip(k).step_by(10).copied().collect::<Vec<_>>();
        for _ in 0..2000 {
            s.step(k, &mut r).unwrap();
            let now: Vec<f64> = s.w.iter().skip(k).step_by(10).copied().collect();
            for u in 0..10 {
                assert!(now[u] >= last[u] - 1e-15, "user {u} interest fell");
            }
            last = now;
        }
        let most = (0..10).max_by(|a, b| s.g[*a].total_cmp(&s.g[*b])).unwrap();
        assert!(
            s.interest_row(most)[k] > 0.99,
            "{}",
            s.interest_row(most)[k]
        );
    }
}

#[cfg(test)]
mod click_bound {
    use super::*;
    use crate::rng::{Role, StreamId};
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        // A unit-norm row peaks when centred: one entry at sqrt((n-1)/n), the
        // rest equal, giving 1 / (1 + (n-1) exp(-sqrt(n/(n-1)))).
        #[test]
        fn click_probability_is_bounded(seed in any::<u64>(), steps in 0usize..300, n in 2usize..12) {
            let config = ContentConfig { n_users: n, n_articles: n, alpha1: 0.1, alpha2: 0.1, ..ContentConfig::default() };
            let mut rng = RngStream::new(seed, StreamId::new(0, Role::EnvStep, 0));
            let mut s = ContentRecState::reset(&config, &mut rng).unwrap();
            for t in 0..steps {
                s.step(t % n, &mut rng).unwrap();
            }
            let m = (n - 1) as f64;
            let bound = 1.0 / (1.0 + m * (-(n as f64 / m).sqrt()).exp());
            for u in 0..n {
                let mut p = Vec::new();
                softmax_into(s.interest_row(u), &mut p);
                prop_assert!(p.iter().all(|&q| q <= bound + 1e-12));
            }
        }
    }
}
