//! The classical Standard Map and its chaotic momentum diffusion.

use std::f64::consts::TAU;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::seed::member_rng;
use crate::stats::{linear_fit, std_dev};

/// Point of the Standard Map phase space. `theta` is kept in `[0, 2pi)`;
/// the angular momentum `l` is not folded.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhasePoint {
    pub theta: f64,
    pub l: f64,
}

impl PhasePoint {
    pub fn new(theta: f64, l: f64) -> Self {
        PhasePoint { theta: theta.rem_euclid(TAU), l }
    }
}

/// One kick period: `theta' = theta + L`, `L' = L + K sin(theta')`.
#[inline]
pub fn standard_map_step(pt: PhasePoint, kick: f64) -> PhasePoint {
    let theta = (pt.theta + pt.l).rem_euclid(TAU);
    PhasePoint { theta, l: pt.l + kick * theta.sin() }
}

/// Inverse of [`standard_map_step`].
#[inline]
pub fn standard_map_step_back(pt: PhasePoint, kick: f64) -> PhasePoint {
    let l = pt.l - kick * pt.theta.sin();
    PhasePoint { theta: (pt.theta - l).rem_euclid(TAU), l }
}

/// Jacobian `d(theta', L') / d(theta, L)` of one step, evaluated at `pt`.
pub fn jacobian(pt: PhasePoint, kick: f64) -> [[f64; 2]; 2] {
    let c = kick * (pt.theta + pt.l).cos();
    [[1.0, 1.0], [c, 1.0 + c]]
}

/// Below this kick strength the phase space is mixed and `D ~ K^2/4` does not apply.
pub const ERGODIC_THRESHOLD: f64 = 5.0;

/// First steps excluded from the diffusion fit.
pub const TRANSIENT_STEPS: usize = 10;

const BATCHES: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum RegimeWarning {
    /// `K <= 5`: the phase space is mixed.
    MixedPhaseSpace,
}

#[derive(Debug, Clone, Serialize)]
pub struct DiffusionEstimate {
    /// Slope of `<L^2>` against `2t`.
    pub d: f64,
    /// Spread of the batch estimates divided by `sqrt(batches)`.
    pub std_err: f64,
    /// `<L^2>` after step `n + 1`, for `n` in `0..n_steps`.
    pub mean_l2: Vec<f64>,
    pub warning: Option<RegimeWarning>,
}

fn batch_sums(kick: f64, n_steps: usize, seed: u64, range: std::ops::Range<usize>) -> Vec<f64> {
    let mut sums = vec![0.0; n_steps];
    for j in range {
        let mut rng = member_rng(seed, j as u64);
        let mut pt = PhasePoint::new(rng.gen::<f64>() * TAU, 0.0);
        for s in sums.iter_mut() {
            pt = standard_map_step(pt, kick);
            *s += pt.l * pt.l;
        }
    }
    sums
}

fn diffusion_slope(mean_l2: &[f64]) -> f64 {
    let start = TRANSIENT_STEPS.min(mean_l2.len().saturating_sub(2));
    let x: Vec<f64> = (start..mean_l2.len()).map(|n| 2.0 * (n + 1) as f64).collect();
    linear_fit(&x, &mean_l2[start..]).map_or(0.0, |f| f.slope)
}

/// Diffusion constant of an ensemble with `theta` uniform in `[0, 2pi)` and
/// `L = 0`. Trajectory `j` draws its angle from member stream `j` of `seed`;
/// batches are reduced in index order, so the result does not depend on
/// the number of threads.
pub fn classical_diffusion(kick: f64, n_traj: usize, n_steps: usize, seed: u64) -> DiffusionEstimate {
    assert!(n_traj >= BATCHES && n_steps >= 2, "need at least {BATCHES} trajectories and 2 steps");
    let bounds: Vec<_> = (0..BATCHES).map(|b| (b * n_traj / BATCHES)..((b + 1) * n_traj / BATCHES)).collect();
    let batches: Vec<Vec<f64>> = bounds.par_iter().map(|r| batch_sums(kick, n_steps, seed, r.clone())).collect();

    let mut total = vec![0.0; n_steps];
    for b in &batches {
        for (t, s) in total.iter_mut().zip(b) {
            *t += s;
        }
    }
    let mean_l2: Vec<f64> = total.iter().map(|s| s / n_traj as f64).collect();
    let d = diffusion_slope(&mean_l2);

    let batch_d: Vec<f64> = batches
        .iter()
        .zip(&bounds)
        .map(|(b, r)| {
            let m: Vec<f64> = b.iter().map(|s| s / r.len() as f64).collect();
            diffusion_slope(&m)
        })
        .collect();
    let std_err = std_dev(&batch_d) / (BATCHES as f64).sqrt();

    let warning = (kick <= ERGODIC_THRESHOLD).then_some(RegimeWarning::MixedPhaseSpace);
    DiffusionEstimate { d, std_err, mean_l2, warning }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    #[test]
    fn origin_is_fixed() {
        for k in [0.0, 1.0, 7.5] {
            assert_eq!(standard_map_step(PhasePoint::new(0.0, 0.0), k), PhasePoint::new(0.0, 0.0));
        }
    }

    #[test]
    fn single_step_arithmetic() {
        let p = standard_map_step(PhasePoint::new(FRAC_PI_2, 0.0), 1.0);
        assert!((p.theta - FRAC_PI_2).abs() < 1e-15);
        assert!((p.l - 1.0).abs() < 1e-15);
    }

    #[test]
    fn theta_pi_is_fixed() {
        for k in [0.3, 4.0, 12.0] {
            let p = standard_map_step(PhasePoint::new(PI, 0.0), k);
            assert!((p.theta - PI).abs() < 1e-15);
            assert!(p.l.abs() < 1e-14);
        }
    }

    #[test]
    fn no_kick_means_no_diffusion() {
        let est = classical_diffusion(0.0, 200, 50, 1);
        assert_eq!(est.d, 0.0);
        assert!(est.mean_l2.iter().all(|&v| v == 0.0));
        assert_eq!(est.warning, Some(RegimeWarning::MixedPhaseSpace));
    }

    #[test]
    fn ergodic_regime_is_not_flagged() {
        assert_eq!(classical_diffusion(10.0, 100, 20, 1).warning, None);
    }

    #[test]
    fn thread_count_does_not_change_result() {
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| classical_diffusion(9.0, 400, 60, 77));
        let b = four.install(|| classical_diffusion(9.0, 400, 60, 77));
        assert_eq!(a.d.to_bits(), b.d.to_bits());
        assert_eq!(a.mean_l2, b.mean_l2);
    }

    // Inside the accelerator-mode window 2pi < K < sqrt(4pi^2 + 16) a small
    // set of islands is transported ballistically, so the fitted D far
    // exceeds K^2/4 once the transient is dropped.
    #[test]
    fn accelerator_modes_dominate_at_k_7_2() {
        let est = classical_diffusion(7.2, 10_000, 200, 3);
        assert!(est.d > 3.0 * 7.2 * 7.2 / 4.0, "D = {}", est.d);
    }

    // K = 10 sits near a positive maximum of J_2(K); the kick-kick
    // correlations pull D well below the quasilinear K^2/4 = 25.
    #[test]
    fn k_10_includes_bessel_correlation_dip() {
        let est = classical_diffusion(10.0, 10_000, 200, 5);
        let rw = 25.0 * rechester_white(10.0);
        assert!((est.d - rw).abs() < 0.1 * rw, "D = {} vs {}", est.d, rw);
    }

    // Independent oracle: leading correlation corrections to the quasilinear
    // diffusion constant, with J_n evaluated by trapezoidal quadrature of
    // the integral representation.
    fn rechester_white(k: f64) -> f64 {
        let j = |n: i32| {
            let m = 4096;
            (0..m)
                .map(|i| {
                    let t = PI * (i as f64 + 0.5) / m as f64;
                    (n as f64 * t - k * t.sin()).cos()
                })
                .sum::<f64>()
                / m as f64
        };
        1.0 - 2.0 * j(2) - 2.0 * j(1).powi(2) + 2.0 * j(2).powi(2) + 2.0 * j(3).powi(2)
    }

    proptest! {
        #[test]
        fn step_is_area_preserving(theta in 0.0..TAU, l in -50.0..50.0f64, k in 0.0..20.0f64) {
            let p = PhasePoint::new(theta, l);
            let j = jacobian(p, k);
            let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
            prop_assert!((det - 1.0).abs() < 1e-12);

            // central finite differences (theta unwrapped locally)
            let h = 1e-6;
            let unwrap = |a: f64, b: f64| { let d = a - b; d - TAU * (d / TAU).round() };
            let s = |th: f64, ll: f64| standard_map_step(PhasePoint { theta: th, l: ll }, k);
            let (tp, tm) = (s(theta + h, l), s(theta - h, l));
            let (lp, lm) = (s(theta, l + h), s(theta, l - h));
            let fd = [
                [unwrap(tp.theta, tm.theta) / (2.0 * h), unwrap(lp.theta, lm.theta) / (2.0 * h)],
                [(tp.l - tm.l) / (2.0 * h), (lp.l - lm.l) / (2.0 * h)],
            ];
            let fd_det = fd[0][0] * fd[1][1] - fd[0][1] * fd[1][0];
            prop_assert!((fd_det - 1.0).abs() < 1e-8 * (1.0 + k * k), "fd det {}", fd_det);
        }

        #[test]
        fn step_is_reversible(theta in 0.0..TAU, l in -50.0..50.0f64, k in 0.0..20.0f64) {
            let p = PhasePoint::new(theta, l);
            let back = standard_map_step_back(standard_map_step(p, k), k);
            let dth = (back.theta - p.theta).abs();
            prop_assert!(dth.min(TAU - dth) < 1e-12);
            prop_assert!((back.l - p.l).abs() < 1e-12);
        }
    }
}
