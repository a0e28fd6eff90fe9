use marcus_wz::{sample_path, JumpDistribution, LevyModel};
use proptest::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn skewed() -> LevyModel {
    let law = JumpDistribution::atoms(vec![vec![-0.5], vec![2.0]], vec![0.6, 0.4]).unwrap();
    LevyModel::new(3.0, law).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn increments_add_bitwise(seed in any::<u64>(), idx in 0u64..1000, level in 2u32..9, a in 0.0f64..1.0, b in 0.0f64..1.0, c in 0.0f64..1.0) {
        let path = sample_path(&skewed(), 1.0, level, seed, idx).unwrap();
        let n = path.cells();
        let mut pts = [a, b, c].map(|u| (u * n as f64) as usize);
        pts.sort();
        let [i, j, k] = pts;
        let (mut w1, mut z1, mut w2, mut z2, mut w, mut z) = ([0.0], [0.0], [0.0], [0.0], [0.0], [0.0]);
        path.increments_between(i, j, &mut w1, &mut z1);
        path.increments_between(j, k, &mut w2, &mut z2);
        path.increments_between(i, k, &mut w, &mut z);
        prop_assert_eq!((w1[0] + w2[0]).to_bits(), w[0].to_bits());
        prop_assert_eq!((z1[0] + z2[0]).to_bits(), z[0].to_bits());
    }

    #[test]
    fn same_key_same_path(seed in any::<u64>(), idx in any::<u64>()) {
        let model = skewed();
        prop_assert_eq!(sample_path(&model, 2.0, 6, seed, idx).unwrap(), sample_path(&model, 2.0, 6, seed, idx).unwrap());
    }
}

#[test]
fn paths_do_not_depend_on_the_sampling_thread() {
    let model = skewed();
    let here: Vec<_> = (0..8).map(|i| sample_path(&model, 1.0, 7, 42, i).unwrap()).collect();
    let handles: Vec<_> = (0..8)
        .rev()
        .map(|i| {
            let model = model.clone();
            std::thread::spawn(move || (i, sample_path(&model, 1.0, 7, 42, i).unwrap()))
        })
        .collect();
    for h in handles {
        let (i, p) = h.join().unwrap();
        assert_eq!(p, here[i as usize]);
    }
    assert_ne!(here[0], here[1]);
}

#[test]
fn compensated_z_has_mean_zero() {
    let model = skewed();
    let m = 4000;
    let zt: Vec<f64> = (0..m)
        .map(|i| {
            let p = sample_path(&model, 1.0, 4, 9, i).unwrap();
            p.increments(0.0, 1.0).unwrap().1[0]
        })
        .collect();
    let mean = zt.iter().sum::<f64>() / m as f64;
    let bound = 4.0 * (model.intensity() * model.second_moment() / m as f64).sqrt();
    assert!(mean.abs() <= bound, "mean {mean} bound {bound}");
}

#[test]
fn brownian_variance_matches_time() {
    let model = LevyModel::brownian_only(2);
    let m = 4000;
    let mut sum_sq = 0.0;
    for i in 0..m {
        let p = sample_path(&model, 2.0, 5, 3, i).unwrap();
        let (w, _) = p.increments(0.5, 2.0).unwrap();
        sum_sq += w.iter().map(|v| v * v).sum::<f64>();
    }
    // E|W_t - W_s|^2 = d (t - s) = 3, Var of each squared component = 2 (1.5)^2
    let mean = sum_sq / m as f64;
    let sd = (2.0 * 2.0 * 1.5f64.powi(2) / m as f64).sqrt();
    assert!((mean - 3.0).abs() < 4.0 * sd, "{mean}");
}

/// Chi-square test of independence of the jump counts in (0, 1/2] and (1/2, 1].
fn independence_p_value(seed: u64) -> f64 {
    let model = LevyModel::new(4.0, JumpDistribution::symmetric_unit()).unwrap();
    let bins = 5;
    let mut table = vec![vec![0.0f64; bins]; bins];
    let m = 2000;
    for i in 0..m {
        let p = sample_path(&model, 1.0, 1, seed, i).unwrap();
        let first = p.jump_times().iter().filter(|&&t| t <= 0.5).count().min(bins - 1);
        let second = (p.jump_count() - p.jump_times().iter().filter(|&&t| t <= 0.5).count()).min(bins - 1);
        table[first][second] += 1.0;
    }
    let rows: Vec<f64> = table.iter().map(|r| r.iter().sum()).collect();
    let cols: Vec<f64> = (0..bins).map(|j| table.iter().map(|r| r[j]).sum()).collect();
    let mut stat = 0.0;
    for a in 0..bins {
        for b in 0..bins {
            let expected = rows[a] * cols[b] / m as f64;
            if expected > 0.0 {
                stat += (table[a][b] - expected).powi(2) / expected;
            }
        }
    }
    let df = ((bins - 1) * (bins - 1)) as f64;
    1.0 - ChiSquared::new(df).unwrap().cdf(stat)
}

#[test]
fn jump_counts_on_disjoint_intervals_are_independent() {
    let passes = (0..10).filter(|&s| independence_p_value(100 + s) > 0.001).count();
    assert!(passes >= 6, "{passes}/10 repetitions passed");
}

#[test]
fn jump_count_mean_is_intensity_times_horizon() {
    let model = skewed();
    let m = 4000;
    let total: usize = (0..m).map(|i| sample_path(&model, 2.0, 3, 5, i).unwrap().jump_count()).sum();
    let mean = total as f64 / m as f64;
    let sd = (6.0 / m as f64).sqrt();
    assert!((mean - 6.0).abs() < 4.0 * sd, "{mean}");
}
