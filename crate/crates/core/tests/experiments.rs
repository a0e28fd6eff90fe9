use marcus_wz::coefficients::{bounded_smooth, scalar_linear};
use marcus_wz::experiments::{
    fit_rate, inversions, linear_fit, mean_ci, strong_error, weak_error, ExperimentConfig, Observable,
    ReferenceKind,
};
use marcus_wz::{CoefficientSet, DerivativeNorms, JumpDistribution, LevyModel};

fn bench(paths: usize, seed: u64) -> ExperimentConfig {
    let model = LevyModel::new(5.0, JumpDistribution::uniform_box(1, 1.0).unwrap()).unwrap();
    ExperimentConfig {
        paths,
        levels: vec![3, 4, 5, 6],
        master_seed: seed,
        ..ExperimentConfig::new(bounded_smooth(1.0, 0.0, 1.0), model, vec![0.5])
    }
}

#[test]
fn median_error_is_monotone_in_h() {
    let curve = strong_error(&bench(200, 1)).unwrap();
    let med = curve.median_errors();
    assert!(inversions(&med) <= 1, "{med:?}");
}

#[test]
fn quadrupling_paths_halves_the_interval() {
    let small = strong_error(&bench(1000, 2)).unwrap();
    let large = strong_error(&bench(4000, 2)).unwrap();
    for (s, l) in small.points.iter().zip(&large.points) {
        let ratio = l.ci_half_width / s.ci_half_width;
        assert!((0.4..=0.6).contains(&ratio), "h = {}: {ratio}", s.h);
    }
}

#[test]
fn block_intervals_cover_the_pooled_mean() {
    let blocks: Vec<_> = (0..20).map(|b| strong_error(&bench(100, 1000 + b)).unwrap()).collect();
    for j in 0..blocks[0].points.len() {
        let all: Vec<f64> = blocks.iter().flat_map(|c| c.per_path.iter().map(move |r| r.errors[j])).collect();
        let (pooled, _) = mean_ci(&all);
        let covered = blocks
            .iter()
            .filter(|c| (c.points[j].error - pooled).abs() <= c.points[j].ci_half_width)
            .count();
        assert!(covered >= 17, "h = {}: {covered}/20", blocks[0].points[j].h);
    }
}

/// `a = A x`, `c = C x` with non-commuting `A`, `C`: the solution and the
/// scheme are both linear in the initial point.
fn linear_pair() -> CoefficientSet {
    CoefficientSet::new("linear_pair", 2, 1)
        .with_drift(|x, o| {
            o[0] = 0.3 * x[1];
            o[1] = -0.2 * x[0];
        })
        .with_jump(|x, o| {
            o[0] = 0.4 * x[0];
            o[1] = 0.1 * x[0] - 0.3 * x[1];
        })
        .with_norms(DerivativeNorms {
            drift: 0.3,
            diffusion: 0.0,
            jump: 0.45,
        })
}

#[test]
fn strong_error_is_affine_in_the_initial_size() {
    let model = LevyModel::new(3.0, JumpDistribution::uniform_box(1, 1.0).unwrap()).unwrap();
    let base = ExperimentConfig {
        paths: 100,
        levels: vec![3, 4, 5],
        ..ExperimentConfig::new(linear_pair(), model, vec![0.0, 0.0])
    };
    let sizes = [0.5, 1.0, 2.0, 5.0, 10.0];
    let errors: Vec<f64> = sizes
        .iter()
        .map(|&s| {
            let cfg = ExperimentConfig {
                x0: vec![0.6 * s, 0.8 * s],
                ..base.clone()
            };
            strong_error(&cfg).unwrap().points[0].error
        })
        .collect();
    let xs: Vec<f64> = sizes.iter().map(|s| 1.0 + s).collect();
    let (_, _, r2) = linear_fit(&xs, &errors);
    assert!(errors[0] > 1e-4);
    assert!(r2 >= 0.95, "{r2} {errors:?}");
    assert!(errors[4] / errors[1] <= (1.0 + 10.0) / 1.0 * 10.0);
}

#[test]
fn weak_error_of_identity_vanishes_for_the_linear_family() {
    let model = LevyModel::new(2.0, JumpDistribution::symmetric_unit()).unwrap();
    let cfg = ExperimentConfig {
        paths: 200,
        levels: vec![2, 3, 4],
        reference: ReferenceKind::ClosedFormLinear {
            alpha: 0.5,
            beta: 0.3,
            gamma: 0.4,
        },
        ..ExperimentConfig::new(scalar_linear(0.5, 0.3, 0.4), model, vec![1.0])
    };
    let curve = weak_error(&cfg, Observable::Identity).unwrap();
    assert!(curve.scheme_exact);
    assert!(curve.points.iter().all(|p| p.error < 1e-7));
}

#[test]
fn weak_rate_of_the_benchmark_when_intervals_permit() {
    let cfg = ExperimentConfig {
        paths: 20_000,
        levels: vec![2, 3, 4, 5],
        ..bench(100, 3)
    };
    let curve = weak_error(&cfg, Observable::Square).unwrap();
    let resolved = curve.points.iter().all(|p| p.ci_half_width < 0.5 * p.error);
    if resolved {
        let fit = fit_rate(&curve, 0.0).unwrap();
        assert!((0.7..=1.3).contains(&fit.slope), "{}", fit.slope);
    } else {
        assert!(!curve.warnings.is_empty() || curve.points.iter().any(|p| p.ci_half_width >= 0.5 * p.error));
    }
}
