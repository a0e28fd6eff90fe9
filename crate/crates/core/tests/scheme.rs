use marcus_wz::coefficients::{bounded_smooth, bounded_smooth_2d, scalar_linear};
use marcus_wz::flows::psi_map;
use marcus_wz::scheme::{closed_form_linear, self_refined_reference, wz_continuous_eval, wz_knots};
use marcus_wz::{sample_path, JumpDistribution, LevyModel, OdeConfig};
use proptest::prelude::*;

fn model(dim: usize) -> LevyModel {
    LevyModel::new(4.0, JumpDistribution::uniform_box(dim, 1.0).unwrap()).unwrap()
}

fn max_rel_error(cfg: &OdeConfig) -> f64 {
    let (a, b, c) = (0.5, 0.3, 0.4);
    let set = scalar_linear(a, b, c);
    let mut worst = 0.0f64;
    for idx in 0..20 {
        let path = sample_path(&model(1), 1.0, 6, 4, idx).unwrap();
        let traj = wz_knots(&set, &path, &[1.0], 1.0 / 16.0, cfg).unwrap();
        let exact = closed_form_linear(a, b, c, 1.0, &path, &traj.knot_times()).unwrap();
        for (s, e) in traj.states().zip(&exact) {
            worst = worst.max(((s[0] - e) / e).abs());
        }
    }
    worst
}

#[test]
fn tightening_the_inner_integrator_shrinks_linear_error() {
    let loose = OdeConfig {
        n_min: 4,
        rho: 8.0,
        richardson: false,
    };
    let coarse = max_rel_error(&loose);
    let fine = max_rel_error(&loose.tightened(2));
    assert!(coarse < 1e-4);
    assert!(fine * 8.0 <= coarse, "{coarse} -> {fine}");
}

#[test]
fn self_refined_linear_reference_matches_closed_form() {
    let set = scalar_linear(0.5, 0.3, 0.4);
    for idx in 0..10 {
        let path = sample_path(&model(1), 1.0, 10, 6, idx).unwrap();
        let traj = self_refined_reference(&set, &path, &[0.8], path.h_min(), &OdeConfig::default()).unwrap();
        let exact = closed_form_linear(0.5, 0.3, 0.4, 0.8, &path, &traj.knot_times()).unwrap();
        for (s, e) in traj.states().zip(&exact) {
            assert!(((s[0] - e) / e).abs() <= 1e-8);
        }
    }
}

#[test]
fn coarse_error_against_self_refined_decreases() {
    let set = bounded_smooth(1.0, 1.0, 1.0);
    let cfg = OdeConfig::default();
    let steps = [1.0 / 8.0, 1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0];
    let mut per_step: Vec<Vec<f64>> = vec![Vec::new(); steps.len()];
    for idx in 0..100 {
        let path = sample_path(&model(1), 1.0, 10, 8, idx).unwrap();
        let reference = self_refined_reference(&set, &path, &[0.3], path.h_min(), &cfg).unwrap();
        for (j, &h) in steps.iter().enumerate() {
            let traj = wz_knots(&set, &path, &[0.3], h, &cfg).unwrap();
            let err = (0..traj.len())
                .map(|k| (traj.state(k)[0] - reference.state_at_grid(k * traj.stride)[0]).abs())
                .fold(0.0, f64::max);
            per_step[j].push(err);
        }
    }
    let medians: Vec<f64> = per_step
        .iter_mut()
        .map(|v| {
            v.sort_by(f64::total_cmp);
            0.5 * (v[49] + v[50])
        })
        .collect();
    assert!(medians.windows(2).all(|w| w[1] < w[0]), "{medians:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn continuous_extension_hits_knots_exactly(seed in any::<u64>(), level in 1u32..5, k in 0usize..64) {
        let set = bounded_smooth_2d(1.0, 1.0, 0.5);
        let path = sample_path(&model(2), 1.0, 6, seed, 0).unwrap();
        let h = 2f64.powi(-(level as i32));
        let cfg = OdeConfig::default();
        let traj = wz_knots(&set, &path, &[0.1, -0.4], h, &cfg).unwrap();
        let k = k % traj.len();
        let v = wz_continuous_eval(&set, &path, &[0.1, -0.4], h, traj.knot_time(k), &cfg).unwrap();
        prop_assert_eq!(v.as_slice(), traj.state(k));
    }

    #[test]
    fn reaggregated_increments_give_the_same_trajectory(seed in any::<u64>(), level in 1u32..6) {
        let set = bounded_smooth_2d(1.0, 1.0, 0.5);
        let path = sample_path(&model(2), 1.0, 7, seed, 3).unwrap();
        let h = 2f64.powi(-(level as i32));
        let cfg = OdeConfig::default();
        let coarse = wz_knots(&set, &path, &[0.2, 0.2], h, &cfg).unwrap();
        let fine = wz_knots(&set, &path, &[0.2, 0.2], h / 2.0, &cfg).unwrap();
        let mut x = vec![0.2, 0.2];
        for k in 0..coarse.len() - 1 {
            let (t0, t1, t2) = (fine.knot_time(2 * k), fine.knot_time(2 * k + 1), fine.knot_time(2 * k + 2));
            let (w1, z1) = path.increments(t0, t1).unwrap();
            let (w2, z2) = path.increments(t1, t2).unwrap();
            let w: Vec<f64> = w1.iter().zip(&w2).map(|(a, b)| a + b).collect();
            let z: Vec<f64> = z1.iter().zip(&z2).map(|(a, b)| a + b).collect();
            x = psi_map(&set, &x, h, &w, &z, &cfg).unwrap();
            prop_assert_eq!(x.as_slice(), coarse.state(k + 1));
        }
    }

    #[test]
    fn a_jump_only_affects_later_knots(seed in any::<u64>(), new_size in -1.0f64..1.0) {
        let set = bounded_smooth(1.0, 0.5, 1.0);
        let path = sample_path(&model(1), 1.0, 6, seed, 1).unwrap();
        prop_assume!(path.jump_count() > 0);
        let j = path.jump_count() / 2;
        prop_assume!((path.jump_size(j)[0] - new_size).abs() > 1e-3);
        let moved = path.with_jump_size(j, &[new_size]).unwrap();
        let cfg = OdeConfig::default();
        let h = 1.0 / 16.0;
        let a = wz_knots(&set, &path, &[0.4], h, &cfg).unwrap();
        let b = wz_knots(&set, &moved, &[0.4], h, &cfg).unwrap();
        let containing = (path.jump_times()[j] / h).ceil() as usize;
        for k in 0..a.len() {
            if k < containing {
                prop_assert_eq!(a.state(k), b.state(k));
            } else {
                prop_assert_ne!(a.state(k), b.state(k));
            }
        }
    }
}
