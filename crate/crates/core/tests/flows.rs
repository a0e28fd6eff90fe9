use marcus_wz::coefficients::{bounded_smooth, bounded_smooth_2d, rotation, sine};
use marcus_wz::flows::{marcus_flow, marcus_flow_segment, psi_map, PsiStepper};
use marcus_wz::OdeConfig;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn zero_inputs_return_x_exactly(x1 in -5.0f64..5.0, x2 in -5.0f64..5.0) {
        let set = bounded_smooth_2d(1.0, 1.0, 0.5);
        let x = [x1, x2];
        let cfg = OdeConfig::default();
        prop_assert_eq!(marcus_flow(&set, &[0.0, 0.0], &x, &cfg).unwrap(), x.to_vec());
        prop_assert_eq!(psi_map(&set, &x, 0.0, &[0.0, 0.0], &[0.0, 0.0], &cfg).unwrap(), x.to_vec());
    }

    #[test]
    fn flow_inverts_with_negated_jump(x in -3.0f64..3.0, z in -2.0f64..2.0) {
        let set = sine(0.0, 0.0, 1.0);
        let cfg = OdeConfig::default();
        let there = marcus_flow(&set, &[z], &[x], &cfg).unwrap();
        let back = marcus_flow(&set, &[-z], &there, &cfg).unwrap();
        prop_assert!((back[0] - x).abs() <= 1e-8);
    }

    #[test]
    fn flow_inverts_in_two_dimensions(x1 in -3.0f64..3.0, x2 in -3.0f64..3.0, z1 in -1.5f64..1.5, z2 in -1.5f64..1.5) {
        let set = bounded_smooth_2d(0.0, 0.0, 1.0);
        let cfg = OdeConfig::default();
        let there = marcus_flow(&set, &[z1, z2], &[x1, x2], &cfg).unwrap();
        let back = marcus_flow(&set, &[-z1, -z2], &there, &cfg).unwrap();
        prop_assert!((back[0] - x1).abs() <= 1e-8 && (back[1] - x2).abs() <= 1e-8);
    }

    #[test]
    fn skew_field_preserves_norm(x1 in -4.0f64..4.0, x2 in -4.0f64..4.0, z in -3.0f64..3.0) {
        let set = rotation(1.0, 0.0);
        let y = marcus_flow(&set, &[z], &[x1, x2], &OdeConfig::default()).unwrap();
        let before = x1.hypot(x2);
        let after = y[0].hypot(y[1]);
        prop_assert!((after - before).abs() <= 1e-10);
    }

    #[test]
    fn half_interval_chaining(x in -3.0f64..3.0, z in -2.0f64..2.0) {
        let set = bounded_smooth(0.0, 0.0, 1.0);
        let stepper = PsiStepper::new(&set, OdeConfig::default());
        let n = stepper.substeps(0.0, &[0.0], &[z]);
        let half = n.div_ceil(2);
        let whole = marcus_flow_segment(&set, &[z], &[x], 0.0, 1.0, 2 * half).unwrap();
        let mid = marcus_flow_segment(&set, &[z], &[x], 0.0, 0.5, half).unwrap();
        let end = marcus_flow_segment(&set, &[z], &mid, 0.5, 1.0, half).unwrap();
        prop_assert!((whole[0] - end[0]).abs() <= 1e-12);
    }
}
