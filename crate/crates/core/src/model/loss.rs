//! Euclidean descriptor comparison and the contrastive loss with its
//! analytic descriptor gradients.

use super::Descriptor;
use crate::error::{Error, Result};

/// Euclidean distance between two descriptors of equal length.
pub fn distance(f0: &Descriptor, f1: &Descriptor) -> Result<f64> {
    if f0.len() != f1.len() {
        return Err(Error::Argument(format!(
            "descriptor lengths differ: {} vs {}",
            f0.len(),
            f1.len()
        )));
    }
    let sum: f64 = f0
        .values()
        .iter()
        .zip(f1.values())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sum.sqrt())
}

/// Contrastive loss `L = (1-y)/2 * d^2 + y/2 * max(alpha - d, 0)^2`.
///
/// `y` may be continuous in [0, 1]; the formula is applied as written.
pub fn contrastive_loss(d: f64, y: f64, alpha: f64) -> Result<f64> {
    if !d.is_finite() || d < 0.0 {
        return Err(Error::Argument(format!(
            "distance must be finite and non-negative, got {d}"
        )));
    }
    if !(0.0..=1.0).contains(&y) {
        return Err(Error::Argument(format!(
            "similarity label must lie in [0, 1], got {y}"
        )));
    }
    if alpha.is_nan() || alpha <= 0.0 {
        return Err(Error::Argument(format!(
            "margin must be positive, got {alpha}"
        )));
    }
    let margin_term = (alpha - d).max(0.0);
    Ok(0.5 * (1.0 - y) * d * d + 0.5 * y * margin_term * margin_term)
}

/// Analytic gradients of the contrastive loss with respect to both
/// descriptors. With `u = (f0 - f1) / d`:
///
/// `dL/dd = (1 - y) d - y max(alpha - d, 0)`, `g0 = (dL/dd) u`, `g1 = -g0`.
///
/// At `d = 0` the gradient is undefined; the minimal-norm subgradient
/// (zero) is returned.
pub fn loss_gradient_wrt_descriptors(
    f0: &Descriptor,
    f1: &Descriptor,
    y: f64,
    alpha: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let d = distance(f0, f1)?;
    // reuse the loss validation for y and alpha
    contrastive_loss(d, y, alpha)?;
    let n = f0.len();
    if d == 0.0 {
        return Ok((vec![0.0; n], vec![0.0; n]));
    }
    let dl_dd = (1.0 - y) * d - y * (alpha - d).max(0.0);
    let scale = dl_dd / d;
    let g0: Vec<f64> = f0
        .values()
        .iter()
        .zip(f1.values())
        .map(|(a, b)| scale * (a - b))
        .collect();
    let g1: Vec<f64> = g0.iter().map(|v| -v).collect();
    Ok((g0, g1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn desc(v: &[f64]) -> Descriptor {
        Descriptor::new(v.to_vec()).unwrap()
    }

    #[test]
    fn distance_basics() {
        assert_eq!(
            distance(&desc(&[1.0, 2.0]), &desc(&[1.0, 2.0])).unwrap(),
            0.0
        );
        assert_eq!(
            distance(&desc(&[0.0, 0.0]), &desc(&[3.0, 4.0])).unwrap(),
            5.0
        );
        let a = desc(&[0.3, -0.7, 2.0]);
        let b = desc(&[-1.0, 0.2, 0.5]);
        assert_eq!(distance(&a, &b).unwrap(), distance(&b, &a).unwrap());
        assert!(distance(&desc(&[1.0]), &desc(&[1.0, 2.0])).is_err());
    }

    #[test]
    fn loss_trivial_points() {
        assert_eq!(contrastive_loss(0.0, 0.0, 1.0).unwrap(), 0.0);
        assert_eq!(contrastive_loss(1.0, 1.0, 1.0).unwrap(), 0.0);
        assert_eq!(contrastive_loss(2.5, 1.0, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn loss_matches_hand_evaluation() {
        // y=1, alpha=1, d=0.4: 0.5 * (1 - 0.4)^2 = 0.18
        let l = contrastive_loss(0.4, 1.0, 1.0).unwrap();
        assert!((l - 0.18).abs() < 1e-15);
        // mixed label: y=0.25, d=0.5, alpha=1:
        // 0.5*0.75*0.25 + 0.5*0.25*0.25 = 0.09375 + 0.03125 = 0.125
        let l = contrastive_loss(0.5, 0.25, 1.0).unwrap();
        assert!((l - 0.125).abs() < 1e-15);
    }

    #[test]
    fn loss_rejects_domain_violations() {
        assert!(contrastive_loss(-0.1, 0.5, 1.0).is_err());
        assert!(contrastive_loss(0.1, 1.5, 1.0).is_err());
        assert!(contrastive_loss(0.1, -0.5, 1.0).is_err());
        assert!(contrastive_loss(0.1, 0.5, 0.0).is_err());
    }

    #[test]
    fn loss_is_continuous_at_the_margin() {
        let eps = 1e-9;
        let below = contrastive_loss(1.0 - eps, 1.0, 1.0).unwrap();
        let above = contrastive_loss(1.0 + eps, 1.0, 1.0).unwrap();
        assert!(below < 1e-15);
        assert_eq!(above, 0.0);
    }

    #[test]
    fn loss_monotonicity_in_d() {
        let mut prev = contrastive_loss(0.0, 0.0, 1.0).unwrap();
        for i in 1..100 {
            let d = i as f64 * 0.05;
            let l = contrastive_loss(d, 0.0, 1.0).unwrap();
            assert!(l > prev, "y=0 loss must increase");
            prev = l;
        }
        let mut prev = contrastive_loss(0.0, 1.0, 1.0).unwrap();
        for i in 1..100 {
            let d = i as f64 * 0.05;
            let l = contrastive_loss(d, 1.0, 1.0).unwrap();
            assert!(l <= prev, "y=1 loss must not increase");
            prev = l;
        }
    }

    #[test]
    fn gradient_hand_case_one_dim() {
        // f0=2, f1=0, y=0: L = d^2/2 with d=2, dL/df0 = 2
        let (g0, g1) =
            loss_gradient_wrt_descriptors(&desc(&[2.0]), &desc(&[0.0]), 0.0, 1.0).unwrap();
        assert!((g0[0] - 2.0).abs() < 1e-15);
        assert!((g1[0] + 2.0).abs() < 1e-15);
    }

    #[test]
    fn gradient_zero_in_flat_region_and_at_zero_distance() {
        let (g0, g1) =
            loss_gradient_wrt_descriptors(&desc(&[3.0, 0.0]), &desc(&[0.0, 0.0]), 1.0, 1.0)
                .unwrap();
        assert!(g0.iter().all(|&v| v == 0.0));
        assert!(g1.iter().all(|&v| v == 0.0));

        let same = desc(&[0.5, -0.5]);
        let (g0, g1) = loss_gradient_wrt_descriptors(&same, &same, 0.0, 1.0).unwrap();
        assert!(g0.iter().all(|&v| v == 0.0));
        assert!(g1.iter().all(|&v| v == 0.0));
    }

    /// Central finite differences of loss(distance(f0, f1)) in both
    /// descriptors; the independent oracle for the analytic gradient.
    fn numeric_gradients(
        f0: &[f64],
        f1: &[f64],
        y: f64,
        alpha: f64,
        eps: f64,
    ) -> (Vec<f64>, Vec<f64>) {
        let eval = |a: &[f64], b: &[f64]| {
            let d = distance(&desc(a), &desc(b)).unwrap();
            contrastive_loss(d, y, alpha).unwrap()
        };
        let mut g0 = Vec::new();
        let mut probe = f0.to_vec();
        for i in 0..f0.len() {
            let orig = probe[i];
            probe[i] = orig + eps;
            let up = eval(&probe, f1);
            probe[i] = orig - eps;
            let down = eval(&probe, f1);
            probe[i] = orig;
            g0.push((up - down) / (2.0 * eps));
        }
        let mut g1 = Vec::new();
        let mut probe = f1.to_vec();
        for i in 0..f1.len() {
            let orig = probe[i];
            probe[i] = orig + eps;
            let up = eval(f0, &probe);
            probe[i] = orig - eps;
            let down = eval(f0, &probe);
            probe[i] = orig;
            g1.push((up - down) / (2.0 * eps));
        }
        (g0, g1)
    }

    #[test]
    fn gradients_match_finite_differences_on_random_tuples() {
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        let mut checked = 0usize;
        while checked < 1000 {
            let dim = rng.random_range(1..8);
            let f0: Vec<f64> = (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect();
            let f1: Vec<f64> = (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect();
            let y = rng.random_range(0.0..=1.0);
            let alpha = rng.random_range(0.1..2.0);
            let d = distance(&desc(&f0), &desc(&f1)).unwrap();
            if d <= 1e-3 || (d - alpha).abs() < 1e-4 {
                // skip the kink at d = alpha and the origin
                continue;
            }
            let (a0, a1) = loss_gradient_wrt_descriptors(&desc(&f0), &desc(&f1), y, alpha).unwrap();
            let (n0, n1) = numeric_gradients(&f0, &f1, y, alpha, 1e-6);
            for (a, n) in a0.iter().zip(&n0).chain(a1.iter().zip(&n1)) {
                let denom = a.abs().max(n.abs()).max(1e-8);
                assert!(
                    ((a - n) / denom).abs() < 1e-4,
                    "analytic {a} vs numeric {n} (d={d}, y={y}, alpha={alpha})"
                );
            }
            checked += 1;
        }
    }
}
