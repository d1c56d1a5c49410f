//! Euclidean projections onto Lp balls and the input box.

use super::Norm;

/// Coordinatewise clamp to `[0, 1]`.
pub fn clip_domain(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| v.clamp(0.0, 1.0)).collect()
}

pub fn norm_of(v: &[f64], p: Norm) -> f64 {
    match p {
        Norm::L1 => v.iter().map(|x| x.abs()).sum(),
        Norm::L2 => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
        Norm::Linf => v.iter().fold(0.0, |m, x| m.max(x.abs())),
    }
}

/// Projects `offset` onto `{ w : ||w||_1 <= eps }` with the sorted-threshold method.
pub fn project_l1_offset(offset: &[f64], eps: f64) -> Vec<f64> {
    if norm_of(offset, Norm::L1) <= eps {
        return offset.to_vec();
    }
    let mut magnitudes: Vec<f64> = offset.iter().map(|v| v.abs()).collect();
    magnitudes.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (j, &u) in magnitudes.iter().enumerate() {
        cumulative += u;
        let candidate = (cumulative - eps) / (j + 1) as f64;
        if u - candidate > 0.0 {
            theta = candidate;
        } else {
            break;
        }
    }
    let mut projected: Vec<f64> = offset.iter().map(|&v| v.signum() * (v.abs() - theta).max(0.0)).collect();
    // Rounding in the threshold can overshoot the radius by an ulp or two.
    shrink_into_ball(&mut projected, eps, Norm::L1);
    projected
}

/// Scales `v` down until its norm is at most `eps` in floating point.
fn shrink_into_ball(v: &mut [f64], eps: f64, p: Norm) {
    let mut shrink = 1.0 - f64::EPSILON;
    while norm_of(v, p) > eps {
        let s = (eps / norm_of(v, p)).min(shrink);
        v.iter_mut().for_each(|x| *x *= s);
        shrink *= shrink;
    }
}

/// Projects `v` onto the `p`-ball of radius `eps` around `center`; points already
/// inside are returned unchanged.
pub fn project_lp(v: &[f64], center: &[f64], eps: f64, p: Norm) -> Vec<f64> {
    let offset: Vec<f64> = v.iter().zip(center).map(|(a, c)| a - c).collect();
    if norm_of(&offset, p) <= eps {
        return v.to_vec();
    }
    let projected = match p {
        Norm::Linf => offset.iter().map(|o| o.clamp(-eps, eps)).collect(),
        Norm::L2 => {
            let n = norm_of(&offset, Norm::L2);
            let s = eps / n;
            let mut scaled: Vec<f64> = offset.iter().map(|o| o * s).collect();
            shrink_into_ball(&mut scaled, eps, Norm::L2);
            scaled
        }
        Norm::L1 => project_l1_offset(&offset, eps),
    };
    center.iter().zip(projected).map(|(c, o)| c + o).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inside_ball_is_identity() {
        let c = [0.5, 0.5, 0.5];
        let v = [0.6, 0.4, 0.5];
        for p in [Norm::L1, Norm::L2, Norm::Linf] {
            assert_eq!(project_lp(&v, &c, 1.0, p), v.to_vec());
        }
    }

    #[test]
    fn l1_hand_example() {
        assert_eq!(project_l1_offset(&[3.0, 1.0], 2.0), vec![2.0, 0.0]);
        let out = project_lp(&[4.0, 2.0], &[1.0, 1.0], 2.0, Norm::L1);
        assert_eq!(out, vec![3.0, 1.0]);
    }

    #[test]
    fn projected_norm_never_exceeds_radius() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5000 {
            let v: Vec<f64> = (0..7).map(|_| rng.random_range(-10.0..10.0)).collect();
            let eps = rng.random_range(0.01..5.0);
            for p in [Norm::L1, Norm::L2, Norm::Linf] {
                assert!(norm_of(&project_lp(&v, &[0.0; 7], eps, p), p) <= eps);
            }
        }
    }

    #[test]
    fn l2_three_four_five() {
        let out = project_lp(&[3.0, 4.0], &[0.0, 0.0], 1.0, Norm::L2);
        assert!((out[0] - 0.6).abs() < 1e-15 && (out[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn linf_clamps() {
        assert_eq!(project_lp(&[3.0, -0.5, -4.0], &[0.0; 3], 1.0, Norm::Linf), vec![1.0, -0.5, -1.0]);
    }

    #[test]
    fn clip_examples() {
        assert_eq!(clip_domain(&[-0.5, 1.5]), vec![0.0, 1.0]);
        let x = [0.2, 0.9];
        assert_eq!(clip_domain(&x), x.to_vec());
        let once = clip_domain(&[-3.0, 0.4, 7.0]);
        assert_eq!(clip_domain(&once), once);
    }

    /// The L1 projection minimizes distance: compare with a fine grid search over the ball in 2-d.
    #[test]
    fn l1_matches_grid_search_in_2d() {
        let cases = [([3.0, 1.0], 2.0), ([-1.0, 2.5], 1.5), ([0.3, -0.9], 1.0)];
        for (v, eps) in cases {
            let proj = project_l1_offset(&v, eps);
            let steps = 2000;
            let mut best = (f64::INFINITY, [0.0, 0.0]);
            for i in 0..=steps {
                let a = -eps + 2.0 * eps * i as f64 / steps as f64;
                let rem = eps - a.abs();
                for b in [rem, -rem] {
                    let d = (a - v[0]).powi(2) + (b - v[1]).powi(2);
                    if d < best.0 {
                        best = (d, [a, b]);
                    }
                }
            }
            assert!(
                (proj[0] - best.1[0]).abs() < 2e-3 && (proj[1] - best.1[1]).abs() < 2e-3,
                "{proj:?} vs {:?}",
                best.1
            );
        }
    }
}
