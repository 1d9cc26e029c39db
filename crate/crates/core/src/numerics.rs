//! Elementary functions shared by the environments, learners and metrics.

use crate::error::{Error, Result};
use crate::rng::RngStream;

fn check_finite(v: &[f64], what: &'static str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::InvalidArgument("softmax of empty vector".into()));
    }
    check_finite(v, "softmax input")?;
    let mut out = Vec::with_capacity(v.len());
    softmax_into(v, &mut out);
    Ok(out)
}

/// Softmax into a reusable buffer. Caller guarantees finite, non-empty input.
pub(crate) fn softmax_into(v: &[f64], out: &mut Vec<f64>) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    out.clear();
    out.extend(v.iter().map(|x| (x - max).exp()));
    let sum: f64 = out.iter().sum();
    for p in out.iter_mut() {
        *p /= sum;
    }
}

/// Logistic function, evaluated on the branch that cannot overflow.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Inverse-CDF draw from a categorical distribution using exactly one uniform.
pub fn sample_categorical(p: &[f64], rng: &mut RngStream) -> Result<usize> {
    validate_distribution(p, 1e-9)?;
    Ok(draw_categorical(p, rng.uniform()))
}

pub(crate) fn validate_distribution(p: &[f64], tol: f64) -> Result<()> {
    if p.is_empty() {
        return Err(Error::InvalidDistribution("empty".into()));
    }
    if let Some((i, x)) = p
        .iter()
        .enumerate()
        .find(|(_, x)| !x.is_finite() || **x < 0.0)
    {
        return Err(Error::InvalidDistribution(format!("entry {i} = {x}")));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > tol {
        return Err(Error::InvalidDistribution(format!("sums to {sum}")));
    }
    Ok(())
}

/// Maps a uniform `u` in `[0,1)` to an index. Zero-probability entries are
/// never returned, including when rounding leaves the cumulative sum short of 1.
pub(crate) fn draw_categorical(p: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &pi) in p.iter().enumerate() {
        if pi <= 0.0 {
            continue;
        }
        acc += pi;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

pub fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

pub fn l2_norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// `1 - cos(u, v)`, in `[0, 2]`.
pub fn cosine_distance(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Shape {
            expected: u.len(),
            got: v.len(),
        });
    }
    let (nu, nv) = (l2_norm(u), l2_norm(v));
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroNorm);
    }
    let cos = (dot(u, v) / (nu * nv)).clamp(-1.0, 1.0);
    Ok(1.0 - cos)
}

/// `KL(p || q)` in nats, with `0 log 0 = 0`.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Shape {
            expected: p.len(),
            got: q.len(),
        });
    }
    let mut kl = 0.0;
    for (i, (&pi, &qi)) in p.iter().zip(q).enumerate() {
        if pi < 0.0 || qi < 0.0 || !pi.is_finite() || !qi.is_finite() {
            return Err(Error::InvalidDistribution(format!("entry {i}")));
        }
        if pi == 0.0 {
            continue;
        }
        if qi == 0.0 {
            return Err(Error::Support(i));
        }
        kl += pi * (pi / qi).ln();
    }
    // Rounding can leave tiny negative totals for p ~= q.
    Ok(kl.max(0.0))
}

/// Learning rate drawn log-uniformly from `[lo, hi]`.
pub fn log_uniform(lo: f64, hi: f64, rng: &mut RngStream) -> f64 {
    let (a, b) = (lo.ln(), hi.ln());
    (a + (b - a) * rng.uniform()).exp().clamp(lo, hi)
}

pub fn one_hot(index: usize, width: usize) -> Vec<f64> {
    let mut v = vec![0.0; width];
    v[index] = 1.0;
    v
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Standard error of the mean (sample std / sqrt(n)); zero for n < 2.
pub fn std_error(v: &[f64]) -> f64 {
    let n = v.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(v);
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
    (var / n as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Role, StreamId};
    use proptest::prelude::*;

    fn stream(seed: u64) -> RngStream {
        RngStream::new(seed, StreamId::new(0, Role::Meta, 0))
    }

    #[test]
    fn softmax_uniform() {
        let p = softmax(&[0.0, 0.0, 0.0]).unwrap();
        for x in p {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_large_offsets() {
        let c = 1e6;
        let p = softmax(&[c, c + 1000.0]).unwrap();
        assert!(p[0] < 1e-300);
        assert!((p[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn softmax_reference_values() {
        // 40-digit evaluation of exp(i) / sum exp(j).
        let expected = [0.09003057317038046, 0.24472847105479764, 0.6652409557748219];
        let p = softmax(&[1.0, 2.0, 3.0]).unwrap();
        for (a, b) in p.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15, "{a} vs {b}");
        }
    }

    #[test]
    fn softmax_rejects_nan() {
        assert!(matches!(
            softmax(&[0.0, f64::NAN]),
            Err(Error::NonFinite(_))
        ));
        assert!(softmax(&[f64::INFINITY]).is_err());
        assert!(softmax(&[]).is_err());
    }

    #[test]
    fn categorical_degenerate() {
        let mut rng = stream(1);
        for _ in 0..1000 {
            assert_eq!(sample_categorical(&[0.0, 1.0, 0.0], &mut rng).unwrap(), 1);
        }
    }

    #[test]
    fn categorical_frequency() {
        let mut rng = stream(2);
        let n = 100_000;
        let ones = (0..n)
            .filter(|_| sample_categorical(&[0.5, 0.5], &mut rng).unwrap() == 1)
            .count();
        let f = ones as f64 / n as f64;
        assert!((f - 0.5).abs() < 0.01, "{f}");
    }

    #[test]
    fn categorical_replay() {
        let p = [0.2, 0.3, 0.5];
        let run = |seed| {
            let mut rng = stream(seed);
            (0..200)
                .map(|_| sample_categorical(&p, &mut rng).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(run(9), run(9));
    }

    #[test]
    fn categorical_one_draw() {
        let mut a = stream(3);
        let mut b = stream(3);
        sample_categorical(&[0.2, 0.3, 0.5], &mut a).unwrap();
        b.uniform();
        assert_eq!(a.uniform(), b.uniform());
    }

    #[test]
    fn categorical_rejects_bad_input() {
        let mut rng = stream(4);
        assert!(sample_categorical(&[0.0, 0.0], &mut rng).is_err());
        assert!(sample_categorical(&[1.5, -0.5], &mut rng).is_err());
    }

    #[test]
    fn sigmoid_values() {
        assert_eq!(sigmoid(0.0), 0.5);
        // 40-digit reference.
        assert!((sigmoid(2.0) - 0.8807970779778824).abs() < 1e-15);
        assert_eq!(sigmoid(1000.0), 1.0);
        assert_eq!(sigmoid(-1000.0), 0.0);
    }

    #[test]
    fn cosine_cases() {
        assert!(cosine_distance(&[1.0, 2.0], &[1.0, 2.0]).unwrap().abs() < 1e-15);
        assert!((cosine_distance(&[1.0, 0.0], &[0.0, 3.0]).unwrap() - 1.0).abs() < 1e-15);
        let d = cosine_distance(&[1.0, 1.0], &[1.0, 0.0]).unwrap();
        assert!((d - 0.2928932188134525).abs() < 1e-15);
        assert!(matches!(
            cosine_distance(&[0.0, 0.0], &[1.0, 0.0]),
            Err(Error::ZeroNorm)
        ));
    }

    #[test]
    fn kl_cases() {
        assert_eq!(kl_divergence(&[0.25; 4], &[0.25; 4]).unwrap(), 0.0);
        let k = kl_divergence(&[1.0, 0.0], &[0.5, 0.5]).unwrap();
        assert!((k - std::f64::consts::LN_2).abs() < 1e-15);
        let k = kl_divergence(&[0.7, 0.3], &[0.5, 0.5]).unwrap();
        assert!((k - 0.08228287850505185).abs() < 1e-15);
        assert!(matches!(
            kl_divergence(&[0.5, 0.5], &[1.0, 0.0]),
            Err(Error::Support(1))
        ));
    }

    #[test]
    fn log_uniform_range_and_median() {
        let mut rng = stream(5);
        let mut xs: Vec<f64> = (0..10_000)
            .map(|_| log_uniform(0.01, 1.0, &mut rng))
            .collect();
        assert!(xs.iter().all(|x| (0.01..=1.0).contains(x)));
        xs.sort_by(f64::total_cmp);
        let median = xs[xs.len() / 2];
        // Median of a log-uniform is the geometric mean of its bounds.
        assert!((median / 0.1 - 1.0).abs() < 0.15, "{median}");
    }

    proptest! {
        #[test]
        fn softmax_normalised_and_shift_invariant(
            v in prop::collection::vec(-50.0f64..50.0, 1..20),
            c in -100.0f64..100.0,
        ) {
            let p = softmax(&v).unwrap();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert!(p.iter().all(|x| *x >= 0.0));
            let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
            let q = softmax(&shifted).unwrap();
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn sigmoid_symmetric_monotone(x in -30.0f64..30.0, d in 1e-3f64..5.0) {
            prop_assert!((sigmoid(x) + sigmoid(-x) - 1.0).abs() < 1e-12);
            prop_assert!(sigmoid(x + d) > sigmoid(x));
        }

        #[test]
        fn kl_self_zero(v in prop::collection::vec(-5.0f64..5.0, 1..12)) {
            let p = softmax(&v).unwrap();
            prop_assert!(kl_divergence(&p, &p).unwrap().abs() <= 1e-12);
        }

        #[test]
        fn kl_nonnegative(
            a in prop::collection::vec(-5.0f64..5.0, 6),
            b in prop::collection::vec(-5.0f64..5.0, 6),
        ) {
            let p = softmax(&a).unwrap();
            let q = softmax(&b).unwrap();
            prop_assert!(kl_divergence(&p, &q).unwrap() >= 0.0);
        }
    }
}
